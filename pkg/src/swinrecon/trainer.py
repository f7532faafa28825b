"""Adversarial training loop for the SwinMR-style, ST, EES and TES variants.

Per step: update D1 on ``x`` vs detached ``x_hat``; for EES/TES update D2 on
``A(x)`` vs ``A(x_hat)`` (Sobel or Gabor maps); then update the generator on
the weighted total loss. Batches and masks are pure functions of
``(seed, step)``, so a resumed run replays exactly the data an uninterrupted
run would have seen.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import functools
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import archive
from .adversarial import d2_input, discriminator_for
from .config import ExperimentConfig, TrainConfig, from_dict, to_dict
from .dataio import SliceRecord
from .features import ProxyExtractor
from .kspace import gaussian1d_mask, undersample, zero_fill
from .losses import (
    CurveWriter,
    LossRecord,
    adv_loss_d,
    adv_loss_g,
    freq_loss,
    perceptual_loss,
    pixel_loss,
    weighted_total,
)
from .metrics import MetricReport, evaluate_set, save_reports
from .swin import GeneratorConfig, SwinGenerator

log = logging.getLogger(__name__)

TRIM_EVERY = 10


@functools.lru_cache(maxsize=1)
def _libc():
    if not sys.platform.startswith("linux"):
        return None
    name = ctypes.util.find_library("c")
    try:
        lib = ctypes.CDLL(name) if name else None
    except OSError:
        return None
    return lib if lib is not None and hasattr(lib, "malloc_trim") else None


def trim_heap() -> bool:
    """Hand freed heap pages back to the OS (glibc ``malloc_trim``).

    CPU training churns through activation buffers that glibc keeps on the
    heap, so RSS grows by megabytes per step unless trimmed. No-op off glibc.
    """
    lib = _libc()
    return bool(lib.malloc_trim(0)) if lib is not None else False

DTYPES = {"float32": torch.float32, "float64": torch.float64}


class TrainingDivergence(RuntimeError):
    def __init__(self, record: LossRecord):
        super().__init__(f"non-finite loss at step {record.step}: {record}")
        self.record = record


def _seed_int(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0] & 0x7FFFFFFF)


class Trainer:
    """Owns G, D1, D2, their optimizers and the deterministic data schedule."""

    def __init__(self, config: TrainConfig, records: list[SliceRecord]):
        if not records:
            raise ValueError("no training records")
        self.config = config
        self.dtype = DTYPES[config.dtype]
        self.images = torch.from_numpy(np.stack([r.image for r in records])).to(self.dtype)
        self.width = self.images.shape[-1]
        self.step = 0

        torch.manual_seed(config.seed)
        self.generator = SwinGenerator(config.gen_config).to(self.dtype)
        self.d1 = discriminator_for("D1", config.disc_config).to(self.dtype) if config.has_d1 else None
        op = config.d2_operator
        self.d2 = (
            discriminator_for(f"D2-{op}", config.disc_config).to(self.dtype) if op else None
        )
        self.extractor = ProxyExtractor().to(self.dtype)

        betas = config.betas
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=config.lr_g, betas=betas)
        self.opt_d1 = (
            torch.optim.Adam(self.d1.parameters(), lr=config.lr_d, betas=betas) if self.d1 else None
        )
        self.opt_d2 = (
            torch.optim.Adam(self.d2.parameters(), lr=config.lr_d, betas=betas) if self.d2 else None
        )
        self._perms: dict[int, np.ndarray] = {}
        self._masks: dict[int, np.ndarray] = {}

    # -- data schedule ---------------------------------------------------------------

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            rng = np.random.default_rng(_seed_int(self.config.seed, 1, epoch))
            self._perms = {epoch: rng.permutation(len(self.images))}
        return self._perms[epoch]

    def _mask_columns(self, seed: int) -> np.ndarray:
        if seed not in self._masks:
            c = self.config
            self._masks[seed] = gaussian1d_mask(self.width, c.mask_rate, c.center_fraction, seed).columns
        return self._masks[seed]

    def batch(self, step: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Images ``(B, 1, H, W)`` and per-sample mask columns ``(B, 1, 1, W)`` for ``step`` (1-based)."""
        c = self.config
        n = len(self.images)
        idx, cols = [], []
        for b in range(c.batch):
            i = (step - 1) * c.batch + b
            epoch, pos = divmod(i, n)
            k = int(self._perm(epoch)[pos])
            idx.append(k)
            mseed = c.seed if c.fixed_mask else _seed_int(c.seed, 2, epoch, k)
            cols.append(self._mask_columns(mseed))
        x = self.images[idx].unsqueeze(1)
        masks = torch.from_numpy(np.stack(cols)).to(self.dtype).view(c.batch, 1, 1, self.width)
        return x, masks

    def lr_factor(self, step: int) -> float:
        if self.config.lr_schedule == "cosine" and self.config.steps > 0:
            return 0.5 * (1 + math.cos(math.pi * (step - 1) / self.config.steps))
        return 1.0

    # -- one optimisation step ----------------------------------------------------------

    def _update(self, opt, module, loss):
        opt.zero_grad(set_to_none=True)
        loss.backward()
        if self.config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(module.parameters(), self.config.grad_clip)
        opt.step()

    def train_step(self, x: torch.Tensor, masks: torch.Tensor) -> LossRecord:
        c, w = self.config, self.config.weights
        self.step += 1
        factor = self.lr_factor(self.step)
        for opt, lr in ((self.opt_g, c.lr_g), (self.opt_d1, c.lr_d), (self.opt_d2, c.lr_d)):
            if opt is not None:
                for group in opt.param_groups:
                    group["lr"] = lr * factor

        y = undersample(x, masks)
        x_u = zero_fill(y).abs()
        x_hat = self.generator(x_u)
        if not torch.isfinite(x_hat).all():
            nan = float("nan")
            raise TrainingDivergence(LossRecord(self.step, nan, nan, nan, nan, nan, nan))
        fake = x_hat.detach()

        if self.d1 is not None:
            self.d1.requires_grad_(True)
            self._update(self.opt_d1, self.d1, adv_loss_d(self.d1.score(x), self.d1.score(fake)))
        if self.d2 is not None:
            op = c.d2_operator
            self.d2.requires_grad_(True)
            loss_d2 = adv_loss_d(self.d2.score(d2_input(x, op)), self.d2.score(d2_input(fake, op)))
            self._update(self.opt_d2, self.d2, loss_d2)

        zero = x_hat.new_zeros(())
        pix = pixel_loss(x, x_hat, w)
        freq = freq_loss(y, x_hat, masks, w)
        vgg = perceptual_loss(x, x_hat, self.extractor) if w.gamma > 0 else zero
        adv1 = adv2 = zero
        if self.d1 is not None:
            self.d1.requires_grad_(False)
            adv1 = adv_loss_g(self.d1.score(x_hat))
        if self.d2 is not None:
            self.d2.requires_grad_(False)
            adv2 = adv_loss_g(self.d2.score(d2_input(x_hat, c.d2_operator)))
        total = weighted_total(pix, freq, vgg, adv1, adv2, w, c.variant)

        record = LossRecord(
            self.step, *(float(t.detach()) for t in (pix, freq, vgg, adv1, adv2, total))
        )
        if not torch.isfinite(total):
            raise TrainingDivergence(record)
        self._update(self.opt_g, self.generator, total)
        return record

    # -- checkpoints -------------------------------------------------------------------------

    def _optimizers(self):
        return {k: v for k, v in (("G", self.opt_g), ("D1", self.opt_d1), ("D2", self.opt_d2)) if v is not None}

    def _modules(self):
        return {k: v for k, v in (("G", self.generator), ("D1", self.d1), ("D2", self.d2)) if v is not None}

    def save_checkpoint(self, path, extra_meta: dict | None = None) -> Path:
        arrays = {}
        for name, module in self._modules().items():
            arrays.update(archive.module_arrays(module, f"{name}/"))
        groups = {}
        for name, opt in self._optimizers().items():
            sd = opt.state_dict()
            groups[name] = sd["param_groups"]
            for pid, state in sd["state"].items():
                for key, value in state.items():
                    arrays[f"opt/{name}/{pid}/{key}"] = value
        arrays["rng/torch"] = torch.get_rng_state()
        meta = {
            "kind": "train_checkpoint",
            "step": self.step,
            "config": to_dict(self.config),
            "param_groups": groups,
            "roles": {k: getattr(m, "role", "G") for k, m in self._modules().items()},
        }
        meta.update(extra_meta or {})
        archive.save_archive(path, arrays, meta)
        return Path(path)

    def load_checkpoint(self, path) -> None:
        arrays, meta = archive.load_archive(path)
        if meta.get("kind") != "train_checkpoint":
            raise archive.ArchiveError(f"{path} is not a training checkpoint")
        for name, module in self._modules().items():
            archive.load_module_arrays(module, arrays, f"{name}/")
        for name, opt in self._optimizers().items():
            state: dict[int, dict] = {}
            prefix = f"opt/{name}/"
            for key, value in arrays.items():
                if key.startswith(prefix):
                    pid, field = key[len(prefix):].split("/", 1)
                    state.setdefault(int(pid), {})[field] = torch.from_numpy(value)
            opt.load_state_dict({"state": state, "param_groups": meta["param_groups"][name]})
        torch.set_rng_state(torch.from_numpy(arrays["rng/torch"]))
        self.step = int(meta["step"])


def load_generator(path) -> SwinGenerator:
    """Generator from either a model archive or a training checkpoint."""
    arrays, meta = archive.load_archive(path)
    if meta.get("kind") == "train_checkpoint":
        cfg = from_dict(TrainConfig, meta["config"])
        gen_cfg, prefix, dtype = cfg.gen_config, "G/", DTYPES[cfg.dtype]
    else:
        if meta.get("role") != "G":
            raise archive.ArchiveError(f"{path} holds role {meta.get('role')!r}, not a generator")
        gen_cfg, prefix = GeneratorConfig(**meta["config"]), ""
        dtype = DTYPES.get(meta.get("dtype", "float32"), torch.float32)
    gen = SwinGenerator(gen_cfg).to(dtype)
    archive.load_module_arrays(gen, arrays, prefix)
    return gen.eval()


@torch.no_grad()
def reconstruct(generator, images, mask, batch_size: int = 16) -> np.ndarray:
    """``G(|zero_fill(undersample(x, mask))|)`` for each 2D image in ``images``."""
    if isinstance(generator, (str, Path)):
        generator = load_generator(generator)
    generator.eval()
    dtype = next(generator.parameters()).dtype
    x = torch.as_tensor(np.stack([np.asarray(im) for im in images])).to(dtype).unsqueeze(1)
    out = []
    for i in range(0, len(x), batch_size):
        xb = x[i : i + batch_size]
        x_u = zero_fill(undersample(xb, mask)).abs()
        out.append(generator(x_u))
    return torch.cat(out).squeeze(1).double().numpy()


def zero_filled(images, mask) -> np.ndarray:
    x = torch.as_tensor(np.stack([np.asarray(im, dtype=np.float64) for im in images]))
    return zero_fill(undersample(x, mask)).abs().numpy()


def mask_tag(rate: float) -> str:
    return f"G1D{round(rate * 100):d}%"


def evaluate_generator(generator, records: list[SliceRecord], mask, extractor=None) -> dict[str, MetricReport]:
    """Metric reports for the zero-filled baseline and the reconstruction."""
    truth = [r.image.astype(np.float64) for r in records]
    tag = mask_tag(mask.rate)
    zf = zero_filled(truth, mask)
    recon = reconstruct(generator, truth, mask)
    return {
        "zf": evaluate_set(truth, list(zf), tag, extractor),
        "recon": evaluate_set(truth, list(recon), tag, extractor),
    }


def eval_mask(config: TrainConfig, width: int):
    return gaussian1d_mask(width, config.mask_rate, config.center_fraction, _seed_int(config.seed, 3))


@dataclass
class FitResult:
    run_dir: Path
    checkpoint: Path
    curves: Path
    reports: dict[str, MetricReport]
    records: list[LossRecord]


def fit(
    config: ExperimentConfig,
    train_records: list[SliceRecord],
    test_records: list[SliceRecord] | None,
    run_dir,
    resume: str | Path | None = None,
) -> FitResult:
    """Train, stream curves, checkpoint, and evaluate on ``test_records``.

    Run directory layout: ``config.json``, ``curves.csv``, ``checkpoints/``
    (``step_XXXXXXX.ckpt``, ``final.ckpt``, ``generator.swr``), ``reports/``.
    """
    tc = config.train
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "reports").mkdir(exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(to_dict(config), indent=2, sort_keys=True) + "\n")

    trainer = Trainer(tc, train_records)
    if resume is not None:
        trainer.load_checkpoint(resume)
        log.info("resumed from %s at step %d", resume, trainer.step)
    curves = CurveWriter(run_dir / "curves.csv", truncate_after=trainer.step if resume else None)

    history = []
    for step in range(trainer.step + 1, tc.steps + 1):
        record = trainer.train_step(*trainer.batch(step))
        curves.write(record)
        history.append(record)
        if step % TRIM_EVERY == 0:
            trim_heap()
        if step % 100 == 0:
            log.info("step %d total %.5g pix %.5g", step, record.total, record.pix)
        if tc.checkpoint_every and step % tc.checkpoint_every == 0:
            trainer.save_checkpoint(run_dir / "checkpoints" / f"step_{step:07d}.ckpt")

    final = trainer.save_checkpoint(run_dir / "checkpoints" / "final.ckpt")
    gen_meta_cfg = tc.gen_config.to_dict()
    archive.save_archive(
        run_dir / "checkpoints" / "generator.swr",
        archive.module_arrays(trainer.generator),
        {"role": "G", "config": gen_meta_cfg, "dtype": tc.dtype},
    )

    reports: dict[str, MetricReport] = {}
    if test_records:
        subset = test_records[: tc.eval_max_images] if tc.eval_max_images else test_records
        mask = eval_mask(tc, trainer.width)
        reports = evaluate_generator(trainer.generator, subset, mask)
        save_reports(run_dir / "reports" / "metrics.json", reports, {"variant": tc.variant, "steps": tc.steps})
    return FitResult(run_dir, final, curves.path, reports, history)
