"""Embedding parameterisations: a free per-sample table and a ReLU MLP."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

VARIANTS = ("free_table", "mlp")
_MAGIC = b"CCENC1\x00\x00"


@dataclass
class EncoderParams:
    variant: str
    dims: tuple
    table: Optional[np.ndarray] = None
    weights: list = field(default_factory=list)  # (out, in) matrices
    biases: list = field(default_factory=list)
    version: int = 0

    def arrays(self) -> list:
        """Parameter arrays in a fixed order; optimisers update these in place."""
        if self.variant == "free_table":
            return [self.table]
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def bump(self):
        self.version += 1

    @property
    def out_dim(self) -> int:
        return int(self.dims[-1])


@dataclass
class ForwardCache:
    version: int
    inputs: np.ndarray
    pre: list
    post: list


def init_params(variant: str, dims, seed) -> EncoderParams:
    """free_table: dims = (n, m); mlp: dims = [in, hidden..., out]."""
    dims = tuple(int(d) for d in dims)
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if any(d <= 0 for d in dims):
        raise ValueError(f"zero-width layer in dims {dims}")
    rng = np.random.default_rng(seed)
    if variant == "free_table":
        if len(dims) != 2:
            raise ValueError("free_table dims must be (n, m)")
        return EncoderParams(variant, dims, table=0.1 * rng.standard_normal(dims))
    if len(dims) < 2:
        raise ValueError("mlp needs at least an input and an output width")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(variant, dims, weights=weights, biases=biases)


def forward(params: EncoderParams, inputs):
    """Embed ``inputs`` (row indices for free_table, features for mlp).

    Returns ``(embedding, cache)``; the cache feeds :func:`backward`.
    """
    if params.variant == "free_table":
        idx = np.asarray(inputs, dtype=np.int64).ravel()
        n = params.table.shape[0]
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValueError(f"free_table index out of range 0..{n - 1}")
        return params.table[idx].copy(), ForwardCache(params.version, idx, [], [])

    h = np.asarray(inputs, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params.dims[0]:
        raise ValueError(f"mlp expects inputs of width {params.dims[0]}, got shape {h.shape}")
    pre, post = [], [h]
    last = len(params.weights) - 1
    for li, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if li == last else np.maximum(z, 0.0)
        post.append(h)
    return h, ForwardCache(params.version, post[0], pre, post)


def backward(params: EncoderParams, cache: ForwardCache, grad_out) -> list:
    """Reverse-mode gradients, same order as :meth:`EncoderParams.arrays`."""
    if cache.version != params.version:
        raise RuntimeError("stale forward state: parameters changed since the forward pass")
    g = np.asarray(grad_out, dtype=np.float64)
    if params.variant == "free_table":
        gt = np.zeros_like(params.table)
        np.add.at(gt, cache.inputs, g)
        return [gt]
    grads = []
    last = len(params.weights) - 1
    for li in range(last, -1, -1):
        if li != last:
            g = g * (cache.pre[li] > 0)
        grads.append(g.sum(axis=0))
        grads.append(g.T @ cache.post[li])
        g = g @ params.weights[li]
    grads.reverse()  # now [W0, b0, W1, b1, ...]
    return grads


def save_checkpoint(params: EncoderParams, path) -> None:
    """Header (magic, variant, dims) followed by little-endian float64 arrays."""
    code = VARIANTS.index(params.variant)
    head = _MAGIC + struct.pack("<II", code, len(params.dims))
    head += struct.pack(f"<{len(params.dims)}I", *params.dims)
    with open(path, "wb") as fh:
        fh.write(head)
        for arr in params.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> EncoderParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise ValueError(f"{path}: not an encoder checkpoint")
    code, ndims = struct.unpack_from("<II", blob, 8)
    dims = struct.unpack_from(f"<{ndims}I", blob, 16)
    params = init_params(VARIANTS[code], dims, seed=0)
    offset = 16 + 4 * ndims
    for arr in params.arrays():
        size = arr.size * 8
        if offset + size > len(blob):
            raise ValueError(f"{path}: truncated checkpoint")
        arr[...] = np.frombuffer(blob, dtype="<f8", count=arr.size, offset=offset).reshape(arr.shape)
        offset += size
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    return params
