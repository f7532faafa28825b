import json

import pytest

from swinrecon.cli import main

TINY = [
    "--set", "data.n_cases=5", "--set", "data.slices_per_case=4", "--set", "data.size=32",
]
TINY_TRAIN = [
    "--set", "train.steps=50", "--set", "train.batch=2", "--set", "train.gen_config.input_size=[32,32]",
]


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--out-dir", str(out), *TINY]) == 0
    return out


def test_make_mask_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert main(["make-mask", "--width", "256", "--rate", "0.3", "--seed", "7", "-o", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert sum(json.loads(a.read_text())["columns"]) == round(0.3 * 256)


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SWINRECON_OUT", str(tmp_path / "root"))
    assert main(["make-mask", "--width", "64", "--rate", "0.3"]) == 0
    assert (tmp_path / "root" / "mask.json").exists()


def test_gen_data_idempotent(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--out-dir", str(tmp_path / name), "--seed", "2", *TINY]) == 0
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files_a
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_evaluate_identical_dirs(data_dir, tmp_path, capsys):
    out = tmp_path / "eval"
    slices = str(data_dir / "slices")
    assert main(["evaluate", "--truth", slices, "--recon", slices, "--out-dir", str(out)]) == 0
    report = json.loads((out / "metrics.json").read_text())["reports"]["recon"]
    assert report["psnr_db"] == "inf"
    assert report["ssim"] == 1.0
    assert report["fid"] < 1e-6
    assert (out / "metrics.csv").read_text().splitlines()[0] == "name,psnr_db,ssim,fid,n_images,mask_tag"
    assert (out / "metrics.png").stat().st_size > 0
    assert (out / "examples.png").stat().st_size > 0


def test_unknown_config_key_is_usage_error(data_dir, tmp_path, capsys):
    code = main(["train", "--data", str(data_dir), "--out-dir", str(tmp_path / "r"), "--set", "train.bogus=1"])
    assert code == 2
    assert "bogus" in capsys.readouterr().err


def test_bad_arguments_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["train", "--variant", "xyz", "--data", "."])
    assert info.value.code == 2


def test_runtime_failure_exit_1(tmp_path, capsys):
    code = main(["reconstruct", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(tmp_path),
                 "--mask-rate", "0.3"])
    assert code == 1
    err = capsys.readouterr().err
    assert "error" in err


def test_reconstruct_without_mask_is_usage_error(data_dir, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--out-dir", str(run), "--no-eval",
                 "--set", "train.steps=0", "--set", "train.gen_config.input_size=[32,32]"]) == 0
    capsys.readouterr()
    code = main(["reconstruct", "--checkpoint", str(run / "checkpoints" / "final.ckpt"), "--data", str(data_dir)])
    assert code == 2


def test_end_to_end_smoke(data_dir, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--variant", "st", "--out-dir", str(run), *TINY_TRAIN]) == 0
    assert (run / "curves.png").exists()
    assert len((run / "curves.csv").read_text().splitlines()) == 51

    recon = tmp_path / "recon"
    assert main(["reconstruct", "--checkpoint", str(run / "checkpoints" / "generator.swr"),
                 "--data", str(data_dir), "--mask-rate", "0.3", "--seed", "3", "--out-dir", str(recon)]) == 0
    out = tmp_path / "eval"
    assert main(["evaluate", "--truth", str(data_dir), "--split", "test", "--recon", str(recon),
                 "--out-dir", str(out)]) == 0
    reports = json.loads((out / "metrics.json").read_text())["reports"]
    assert reports["zf"]["mask_tag"] == "G1D30%"
    assert reports["recon"]["ssim"] >= reports["zf"]["ssim"]

    plots = tmp_path / "plots"
    assert main(["plot-curves", str(run), "--out-dir", str(plots)]) == 0
    assert (plots / "run.png").stat().st_size > 0
