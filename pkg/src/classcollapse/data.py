"""Datasets: synthetic multimodal mixtures, MNIST IDX files, CSV features, SVG scatter plots."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
TRAIN, TEST = 0, 1


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    class_labels: np.ndarray
    mode_labels: Optional[np.ndarray] = None
    split: Optional[np.ndarray] = None  # TRAIN / TEST per sample; None means all train

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.class_labels = np.asarray(self.class_labels, dtype=np.int64)
        n = self.class_labels.size
        if self.features.size and self.features.shape[0] != n:
            raise ValueError(f"{self.features.shape[0]} feature rows for {n} labels")
        if self.class_labels.size and self.class_labels.min() < 0:
            raise ValueError("class labels must be non-negative")
        if self.mode_labels is not None:
            self.mode_labels = np.asarray(self.mode_labels, dtype=np.int64)
            if self.mode_labels.shape != (n,):
                raise ValueError("mode_labels must have one entry per sample")
        if self.split is None:
            self.split = np.full(n, TRAIN, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.int64)
        if self.split.shape != (n,) or not np.isin(self.split, (TRAIN, TEST)).all():
            raise ValueError("split must hold TRAIN/TEST per sample")

    @property
    def n(self) -> int:
        return self.class_labels.size

    def indices(self, which: str) -> np.ndarray:
        code = {"train": TRAIN, "test": TEST}[which]
        return np.flatnonzero(self.split == code)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        modes = None if self.mode_labels is None else self.mode_labels[idx]
        return Dataset(self.features[idx], self.class_labels[idx], modes, self.split[idx])


def _mode_centers(n_modes, dim, radius, rng):
    if dim == 1:
        if n_modes > 2:
            raise ValueError("a 1-D sphere holds at most 2 equidistant modes")
        return radius * np.array([[1.0], [-1.0]])[:n_modes]
    if dim == 2:
        ang = 2 * np.pi * np.arange(n_modes) / n_modes + rng.uniform(0, 2 * np.pi)
        return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if dim >= n_modes:
        q, _ = np.linalg.qr(rng.standard_normal((dim, n_modes)))
        return radius * q.T
    v = rng.standard_normal((n_modes, dim))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def gen_multimodal(classes: int, modes_per_class: int, samples_per_mode: int,
                   feature_dim: int, mode_separation: float, noise_sigma: float,
                   seed) -> Dataset:
    """Gaussian blobs around mode centers on a sphere of radius ``mode_separation``.

    Centers are equally spaced on a circle in 2-D and mutually orthogonal when
    ``feature_dim`` allows it. Mode ``k`` belongs to class ``k % classes``, so
    a class gathers modes that sit far apart. Each mode draws its noise from
    its own ``(seed, mode)`` substream.
    """
    if min(classes, modes_per_class, samples_per_mode, feature_dim) < 1:
        raise ValueError("counts and feature_dim must all be >= 1")
    if mode_separation <= 0 or noise_sigma < 0:
        raise ValueError("mode_separation must be > 0 and noise_sigma >= 0")
    n_modes = classes * modes_per_class
    centers = _mode_centers(n_modes, feature_dim, mode_separation,
                            np.random.default_rng([int(seed), n_modes]))
    feats, cls, modes = [], [], []
    for k in range(n_modes):
        rng = np.random.default_rng([int(seed), k])
        feats.append(centers[k] + noise_sigma * rng.standard_normal((samples_per_mode, feature_dim)))
        cls.append(np.full(samples_per_mode, k % classes))
        modes.append(np.full(samples_per_mode, k))
    return Dataset(np.concatenate(feats), np.concatenate(cls), np.concatenate(modes))


# -- IDX ---------------------------------------------------------------------

def _read(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _idx_body(blob, path, magic, ndims):
    if len(blob) < 4:
        raise TruncatedError(f"{path}: expected at least 4 header bytes, got {len(blob)}")
    got = struct.unpack(">I", blob[:4])[0]
    if got != magic:
        raise BadMagicError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    head = 4 + 4 * ndims
    if len(blob) < head:
        raise TruncatedError(f"{path}: expected {head} header bytes, got {len(blob)}")
    dims = struct.unpack(f">{ndims}I", blob[4:head])
    need = head + int(np.prod(dims))
    if len(blob) < need:
        raise TruncatedError(f"{path}: expected {need} bytes, got {len(blob)}")
    return dims, np.frombuffer(blob, dtype=np.uint8, count=need - head, offset=head)


def parse_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair; pixels are flattened and scaled to [0, 1]."""
    (count, rows, cols), pix = _idx_body(_read(images_path), images_path, IMAGE_MAGIC, 3)
    (n_labels,), labels = _idx_body(_read(labels_path), labels_path, LABEL_MAGIC, 1)
    if count != n_labels:
        raise CountMismatchError(f"{count} images but {n_labels} labels")
    feats = pix.reshape(count, rows * cols).astype(np.float64) / 255.0
    return Dataset(feats, labels.astype(np.int64), labels.astype(np.int64))


def write_idx(images, labels, images_path, labels_path) -> None:
    """Write uint8 images (count, rows, cols) and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or labels.shape != (images.shape[0],):
        raise ValueError("images must be (count, rows, cols) with one label each")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", LABEL_MAGIC, labels.size))
        fh.write(labels.tobytes())


def relabel_even_odd(train: Dataset, test: Optional[Dataset], train_digits, test_digits) -> Dataset:
    """Parity classes with the digit as mode label.

    Train samples come from ``train`` restricted to ``train_digits``; test
    samples from ``test`` (or ``train`` when None) restricted to ``test_digits``.
    """
    tr, te = set(int(d) for d in train_digits), set(int(d) for d in test_digits)
    if not tr or not te:
        raise ValueError("train and test digit sets must be non-empty")
    if tr & te:
        raise ValueError(f"digit sets overlap: {sorted(tr & te)}")
    if not (tr | te) <= set(range(10)):
        raise ValueError("digits must lie in 0..9")
    test = train if test is None else test
    a = np.flatnonzero(np.isin(train.class_labels, sorted(tr)))
    b = np.flatnonzero(np.isin(test.class_labels, sorted(te)))
    digits = np.concatenate([train.class_labels[a], test.class_labels[b]])
    return Dataset(
        np.concatenate([train.features[a], test.features[b]]),
        digits % 2,
        digits,
        np.concatenate([np.full(a.size, TRAIN), np.full(b.size, TEST)]),
    )


# -- CSV ---------------------------------------------------------------------

def load_csv(path) -> Dataset:
    """Header ``feature_0..feature_{d-1},class[,mode]``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    head = rows[0]
    d = sum(1 for h in head if h.startswith("feature_"))
    if head[:d] != [f"feature_{i}" for i in range(d)] or d == 0:
        raise ValueError(f"{path}: header must start with feature_0..feature_{{d-1}}")
    rest = head[d:]
    if rest not in (["class"], ["class", "mode"]):
        raise ValueError(f"{path}: expected 'class[,mode]' after the features, got {rest}")
    body = rows[1:]
    for ln, r in enumerate(body, start=2):
        if len(r) != len(head):
            raise ValueError(f"{path}:{ln}: {len(r)} fields, expected {len(head)}")
    arr = np.array(body, dtype=object).reshape(len(body), len(head))
    feats = arr[:, :d].astype(np.float64)
    cls = arr[:, d].astype(np.int64)
    modes = arr[:, d + 1].astype(np.int64) if len(rest) == 2 else None
    return Dataset(feats, cls, modes)


def write_csv(ds: Dataset, path) -> None:
    d = ds.features.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = [f"feature_{i}" for i in range(d)] + ["class"]
        if ds.mode_labels is not None:
            head.append("mode")
        w.writerow(head)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.features[i]] + [int(ds.class_labels[i])]
            if ds.mode_labels is not None:
                row.append(int(ds.mode_labels[i]))
            w.writerow(row)


# -- SVG ---------------------------------------------------------------------

_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _marker(shape, x, y, r, color):
    if shape == 0:
        return f'<circle cx="{x:.4f}" cy="{y:.4f}" r="{r:.4f}" fill="{color}"/>'
    if shape == 1:
        return (f'<rect x="{x - r:.4f}" y="{y - r:.4f}" width="{2 * r:.4f}" '
                f'height="{2 * r:.4f}" fill="{color}"/>')
    # triangle, then further classes rotate the triangle
    k = shape - 2
    ang = np.pi / 2 + k * np.pi / 7 + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
    pts = " ".join(f"{x + r * np.cos(a):.4f},{y - r * np.sin(a):.4f}" for a in ang)
    return f'<polygon points="{pts}" fill="{color}"/>'


def emit_scatter_svg(emb, labels, mode_labels, path, size: int = 480) -> None:
    """Color by mode label, marker shape by class label; 5% padding around the data."""
    x = np.asarray(emb, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a non-empty 2-D embedding")
    if x.shape[1] != 2:
        raise ValueError(f"scatter plots need m = 2, got m = {x.shape[1]}")
    labels = np.asarray(labels)
    modes = labels if mode_labels is None else np.asarray(mode_labels)
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    lo, span = lo - 0.05 * span, 1.1 * span
    _, cls_code = np.unique(labels, return_inverse=True)
    _, mode_code = np.unique(modes, return_inverse=True)
    r = size / 160
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" '
           f'height="{size}" viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    for i in range(x.shape[0]):
        px = (x[i, 0] - lo[0]) / span[0] * size
        py = size - (x[i, 1] - lo[1]) / span[1] * size
        out.append(_marker(int(cls_code[i]), px, py, r, _PALETTE[mode_code[i] % len(_PALETTE)]))
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
