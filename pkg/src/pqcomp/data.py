"""Dataset loading (CIFAR-10 binary, synthetic blobs) and report emission."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError

RECORD_BYTES = 3073
CIFAR_SIDE = 32
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]

REPORT_SCHEMA_VERSION = 1
EPOCH_COLUMNS = ("epoch", "phase", "train_acc", "eval_acc", "lr", "pruned_fraction")


@dataclass
class Dataset:
    images: np.ndarray  # N x C x H x W float32 in [0, 1]
    labels: np.ndarray  # int64
    split: str = "train"
    num_classes: int = 10
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.images) == 0:
            raise ValueError("dataset is empty")
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split: Optional[str] = None) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], split or self.split,
                       self.num_classes, self.mean, self.std)

    def with_normalization(self, mean, std) -> "Dataset":
        return Dataset(self.images, self.labels, self.split, self.num_classes,
                       np.asarray(mean, np.float32), np.asarray(std, np.float32))

    def normalized(self) -> np.ndarray:
        if self.mean is None:
            return self.images
        return ((self.images - self.mean[None, :, None, None]) / self.std[None, :, None, None]).astype(np.float32)


def channel_stats(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    mean = ds.images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = ds.images.std(axis=(0, 2, 3), dtype=np.float64)
    std = np.where(std > 0, std, 1.0)
    return mean.astype(np.float32), std.astype(np.float32)


def train_val_split(ds: Dataset, fraction: float = 0.1, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded disjoint split; normalization stats come from the training part."""
    order = np.random.default_rng(seed).permutation(len(ds))
    n_val = max(1, int(round(fraction * len(ds))))
    train, val = ds.subset(np.sort(order[n_val:]), "train"), ds.subset(np.sort(order[:n_val]), "val")
    mean, std = channel_stats(train)
    return train.with_normalization(mean, std), val.with_normalization(mean, std)


# ---------------------------------------------------------------- CIFAR-10


def parse_cifar10(blob: bytes, split: str = "train") -> Dataset:
    if len(blob) == 0 or len(blob) % RECORD_BYTES:
        raise FormatError(f"size {len(blob)} is not a positive multiple of {RECORD_BYTES}")
    rec = np.frombuffer(blob, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        bad = int(np.flatnonzero(labels > 9)[0])
        raise FormatError(f"record {bad} has label byte {labels[bad]} > 9")
    images = rec[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).astype(np.float32) / np.float32(255)
    return Dataset(images, labels, split, 10)


def load_cifar10(path, split: str = "train", limit: Optional[int] = None) -> Dataset:
    """Load a batch file, or the standard split from a directory of batch files."""
    path = Path(path)
    if path.is_dir():
        names = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
        parts = [parse_cifar10((path / n).read_bytes(), split) for n in names]
        ds = Dataset(np.concatenate([p.images for p in parts]),
                     np.concatenate([p.labels for p in parts]), split, 10)
    else:
        ds = parse_cifar10(path.read_bytes(), split)
    if limit is not None and limit < len(ds):
        ds = ds.subset(np.arange(limit))
    return ds


# ---------------------------------------------------------------- synthetic


def gen_synthetic(seed: int = 0, n_per_class: int = 50, classes: int = 10, image_size: int = 16,
                  noise: float = 0.1, channels: int = 3) -> Dataset:
    """Class-conditional Gaussian blobs on a dark background.

    Each class owns a blob centre, width and colour drawn from ``seed``;
    every sample jitters the centre slightly and adds pixel noise.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.2, 0.8, size=(classes, 2)) * image_size
    widths = rng.uniform(0.08, 0.2, size=classes) * image_size
    colours = rng.uniform(0.2, 1.0, size=(classes, channels))
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)

    images = np.empty((classes * n_per_class, channels, image_size, image_size), dtype=np.float32)
    labels = np.repeat(np.arange(classes), n_per_class)
    for i, c in enumerate(labels):
        jitter = rng.normal(0, 0.5, size=2) * (noise > 0)
        cy, cx = centres[c] + jitter
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * widths[c] ** 2))
        img = colours[c][:, None, None] * blob[None]
        if noise > 0:
            img = img + rng.normal(0, noise, size=img.shape)
        images[i] = np.clip(img, 0, 1)
    return Dataset(images, labels.astype(np.int64), "train", classes)


def augment_batch(images: np.ndarray, rng: np.random.Generator, pad: int = 2) -> np.ndarray:
    """Random horizontal flip plus a random crop from a zero-padded copy."""
    n, _, h, w = images.shape
    flip = rng.random(n) < 0.5
    out = np.where(flip[:, None, None, None], images[..., ::-1], images)
    padded = np.pad(out, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy, dx = rng.integers(0, 2 * pad + 1, size=(2, n))
    return np.stack([padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w] for i in range(n)])


# ---------------------------------------------------------------- histogram


def weight_histogram(weights: np.ndarray, bins: int = 50) -> list[tuple[float, int]]:
    w = np.asarray(weights, dtype=np.float64).ravel()
    lo, hi = float(w.min()), float(w.max())
    if lo == hi:
        return [(lo, int(w.size))]
    counts, edges = np.histogram(w, bins=bins, range=(lo, hi))
    centres = (edges[:-1] + edges[1:]) / 2
    return [(float(c), int(n)) for c, n in zip(centres, counts)]


def emit_histogram(entries, layer: str, bins: int = 50) -> str:
    """CSV (bin_center,count) for one layer of a checkpoint's entries."""
    by_name = {name: data for name, data, _ in entries}
    if layer not in by_name:
        raise KeyError(f"unknown layer {layer!r}; available: {', '.join(by_name)}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_center", "count"])
    for centre, count in weight_histogram(by_name[layer], bins):
        writer.writerow([repr(centre), count])
    return buf.getvalue()


# ---------------------------------------------------------------- reports

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "pipeline", "model", "epochs", "final", "mask_census",
                 "quant", "config", "metrics", "normalization"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "pipeline": {"enum": ["baseline", "spq", "ppq", "none"]},
        "model": {"type": "string"},
        "epochs": {"type": "integer", "minimum": 0},
        "final": {
            "type": "object",
            "properties": {
                "train_acc": {"type": ["number", "null"]},
                "eval_acc": {"type": ["number", "null"]},
                "test_acc": {"type": ["number", "null"]},
                "pruned_fraction": {"type": "number", "minimum": 0, "maximum": 1},
            },
            "required": ["train_acc", "eval_acc", "pruned_fraction"],
        },
        "mask_census": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "properties": {"filters": {"type": "integer"}, "pruned": {"type": "integer"}},
                "required": ["filters", "pruned"],
            },
        },
        "quant": {"type": "object"},
        "config": {"type": "object"},
        "normalization": {"type": "object"},
        "metrics": {
            "type": "object",
            "required": ["size_bits_baseline", "size_bits_compressed", "size_ratio",
                         "bops_baseline", "bops_compressed", "bops_ratio"],
        },
        "records": {"type": "array"},
    },
}


def epoch_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EPOCH_COLUMNS)
    for r in records:
        writer.writerow([r.epoch, r.phase, repr(r.train_acc), repr(r.eval_acc), repr(r.lr),
                         repr(r.pruned_fraction)])
    return buf.getvalue()


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, REPORT_SCHEMA)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def emit_report(report: dict, records, out_dir, stem: str = "run") -> tuple[Path, Path]:
    """Write ``<stem>.json`` and ``<stem>_epochs.csv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = _jsonable(report)
    validate_report(report)
    json_path, csv_path = out_dir / f"{stem}.json", out_dir / f"{stem}_epochs.csv"
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    csv_path.write_text(epoch_csv(records))
    return json_path, csv_path
