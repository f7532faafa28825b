"""Synthetic phantom slices, case splits and the on-disk slice/manifest formats.

Slice file layout::

    bytes 0-7    magic  b"SWRSLICE"
    bytes 8-11   format version, uint32 little-endian
    bytes 12-15  metadata length n, uint32 little-endian
    n bytes      UTF-8 JSON {id, seed, case_id, shape, dtype, endianness}
    rest         row-major little-endian float32 pixels
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SWRSLICE"
FORMAT_VERSION = 1
HEADER = struct.Struct("<8sII")
SPLITS = ("train", "val", "test")
DEFAULT_RATIO = (6, 1, 3)


class SliceFormatError(ValueError):
    """The file is not a readable slice file."""


class SliceVersionError(SliceFormatError):
    """The slice file was written by an unsupported format version."""


@dataclass
class SliceRecord:
    id: str
    image: np.ndarray
    seed: int
    case_id: int

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        if self.image.ndim != 2:
            raise ValueError("slice image must be 2D")
        if not np.isfinite(self.image).all():
            raise ValueError(f"slice {self.id} contains non-finite values")
        if self.image.size and (self.image.min() < 0 or self.image.max() > 1):
            raise ValueError(f"slice {self.id} is not normalized to [0, 1]")


def _ellipse(xx, yy, cx, cy, a, b, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _band_limited_noise(rng, size, low=0.08, high=0.25):
    """White noise restricted to an annulus of normalized radial frequency."""
    f = np.fft.fftfreq(size)
    rad = np.hypot(*np.meshgrid(f, f, indexing="ij"))
    spec = np.fft.fft2(rng.standard_normal((size, size)))
    spec[(rad < low) | (rad > high)] = 0
    noise = np.fft.ifft2(spec).real
    return noise / (noise.std() + 1e-12)


def phantom_image(seed: int, size: int) -> np.ndarray:
    """Brain-like phantom in [0, 1]: skull ring, brain body, 3-10 inner structures."""
    rng = np.random.default_rng(seed)
    r = (np.arange(size) + 0.5) / size * 2 - 1
    yy, xx = np.meshgrid(r, r, indexing="ij")

    head_a, head_b = rng.uniform(0.70, 0.84), rng.uniform(0.80, 0.92)
    tilt = rng.uniform(-0.15, 0.15)
    cx, cy = rng.uniform(-0.04, 0.04, size=2)
    head = _ellipse(xx, yy, cx, cy, head_a, head_b, tilt)
    brain = _ellipse(xx, yy, cx, cy, 0.88 * head_a, 0.90 * head_b, tilt)

    img = np.zeros((size, size))
    img[head] += rng.uniform(0.85, 1.0)
    img[brain] -= rng.uniform(0.20, 0.35)

    for _ in range(rng.integers(3, 11)):
        # centers stay well inside the brain body
        rad, ang = 0.55 * np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi)
        ex = cx + rad * head_a * np.cos(ang)
        ey = cy + rad * head_b * np.sin(ang)
        a, b = rng.uniform(0.04, 0.25, size=2)
        level = rng.choice([-0.3, -0.2, -0.1, 0.1, 0.2])
        img[_ellipse(xx, yy, ex, ey, a, b, rng.uniform(0, np.pi)) & brain] += level

    img[brain] += 0.04 * _band_limited_noise(rng, size)[brain]
    gx, gy = rng.uniform(-1, 1, size=2)
    img += 0.02 * (1 + 0.5 * (gx * xx + gy * yy))
    img = np.clip(img, 0.0, None)
    peak = img.max()
    return img / peak if peak > 0 else img


def phantom(seed: int, size: int = 64, case_id: int = 0, slice_id: str | None = None) -> SliceRecord:
    """Deterministic synthetic slice; ``seed`` fully determines the pixels."""
    if size < 8:
        raise ValueError("phantom size must be at least 8")
    image = phantom_image(seed, size).astype(np.float32)
    return SliceRecord(id=slice_id or f"seed{seed}", image=image, seed=int(seed), case_id=case_id)


def slice_seed(seed: int, case_id: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, case_id, index]).generate_state(1)[0])


def split_cases(case_ids, ratio=DEFAULT_RATIO, seed: int = 0) -> dict[str, list[int]]:
    """Shuffle cases and cut them train/val/test by ``ratio`` (rounded; test takes the rest)."""
    ids = sorted(int(c) for c in case_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("case ids must be unique")
    if len(ratio) != 3 or min(ratio) < 0 or sum(ratio) <= 0:
        raise ValueError("ratio must be three non-negative parts")
    total = sum(ratio)
    n = len(ids)
    n_train = int(round(n * ratio[0] / total))
    n_val = int(round(n * ratio[1] / total))
    n_val = min(n_val, n - n_train)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    return {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train : n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val :]),
    }


# -- slice files ------------------------------------------------------------------


def save_slice(path, record: SliceRecord) -> None:
    meta = {
        "id": record.id,
        "seed": int(record.seed),
        "case_id": int(record.case_id),
        "shape": list(record.image.shape),
        "dtype": "float32",
        "endianness": "little",
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    data = np.ascontiguousarray(record.image, dtype="<f4").tobytes()
    Path(path).write_bytes(HEADER.pack(MAGIC, FORMAT_VERSION, len(blob)) + blob + data)


def load_slice(path) -> SliceRecord:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise SliceFormatError(f"{path}: truncated header")
    magic, version, meta_len = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SliceFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise SliceVersionError(
            f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    try:
        meta = json.loads(raw[HEADER.size : HEADER.size + meta_len].decode())
        shape = tuple(int(s) for s in meta["shape"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise SliceFormatError(f"{path}: unreadable metadata ({exc})") from exc
    if meta.get("dtype") != "float32" or meta.get("endianness") != "little":
        raise SliceFormatError(f"{path}: unsupported pixel encoding")
    data = raw[HEADER.size + meta_len :]
    if len(data) != 4 * int(np.prod(shape)):
        raise SliceFormatError(f"{path}: expected {4 * int(np.prod(shape))} data bytes, got {len(data)}")
    image = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)
    return SliceRecord(id=meta["id"], image=image, seed=meta["seed"], case_id=meta["case_id"])


def load_slice_dir(directory) -> list[SliceRecord]:
    return [load_slice(p) for p in sorted(Path(directory).glob("*.slice"))]


# -- datasets ---------------------------------------------------------------------------


@dataclass
class DatasetManifest:
    root: Path
    size: int
    seed: int
    ratio: tuple[int, int, int]
    splits: dict[str, list[int]]
    records: list[dict]

    def case_split(self, case_id: int) -> str:
        for name, cases in self.splits.items():
            if case_id in cases:
                return name
        raise KeyError(case_id)

    def records_for(self, split: str) -> list[dict]:
        cases = set(self.splits[split])
        return [r for r in self.records if r["case_id"] in cases]

    def load(self, split: str) -> list[SliceRecord]:
        return [load_slice(self.root / r["path"]) for r in self.records_for(split)]

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "size": self.size,
            "seed": self.seed,
            "ratio": list(self.ratio),
            "splits": self.splits,
            "records": self.records,
        }

    def save(self) -> Path:
        path = self.root / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load_from(cls, root) -> "DatasetManifest":
        root = Path(root)
        path = root / "manifest.json" if root.is_dir() else root
        d = json.loads(path.read_text())
        return cls(
            root=path.parent,
            size=int(d["size"]),
            seed=int(d["seed"]),
            ratio=tuple(d["ratio"]),
            splits={k: [int(c) for c in v] for k, v in d["splits"].items()},
            records=d["records"],
        )


def build_dataset(
    out_dir, n_cases: int = 30, slices_per_case: int = 20, size: int = 64, seed: int = 0,
    ratio=DEFAULT_RATIO,
) -> DatasetManifest:
    """Write ``n_cases * slices_per_case`` phantom slices plus ``manifest.json``."""
    root = Path(out_dir)
    (root / "slices").mkdir(parents=True, exist_ok=True)
    records = []
    for case in range(n_cases):
        for k in range(slices_per_case):
            sid = f"case{case:03d}_slice{k:03d}"
            rec = phantom(slice_seed(seed, case, k), size, case_id=case, slice_id=sid)
            rel = f"slices/{sid}.slice"
            save_slice(root / rel, rec)
            records.append({"id": sid, "case_id": case, "seed": rec.seed, "path": rel})
    manifest = DatasetManifest(
        root=root,
        size=size,
        seed=seed,
        ratio=tuple(ratio),
        splits=split_cases(range(n_cases), ratio, seed),
        records=records,
    )
    manifest.save()
    return manifest


def in_memory_dataset(
    n_cases: int = 30, slices_per_case: int = 20, size: int = 64, seed: int = 0, ratio=DEFAULT_RATIO
) -> tuple[dict[str, list[int]], list[SliceRecord]]:
    """The records :func:`build_dataset` would write, without touching disk."""
    records = [
        phantom(slice_seed(seed, c, k), size, case_id=c, slice_id=f"case{c:03d}_slice{k:03d}")
        for c in range(n_cases)
        for k in range(slices_per_case)
    ]
    return split_cases(range(n_cases), ratio, seed), records
