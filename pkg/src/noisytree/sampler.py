"""Sampling from tree models and the k-ary symmetric channel.

RNG streams are counter-based (Philox) and keyed per (seed, purpose, node),
so any slicing of the work across workers reproduces the same samples.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import NoiseSpec, TreeModel
from .oracle import PairwisePmfSet

_CLEAN_STREAM = 0
_NOISE_STREAM = 1


@dataclass(frozen=True, eq=False)
class SampleMatrix:
    """N x n matrix of symbol indices in [0, k)."""

    values: np.ndarray

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


def _node_stream(seed: int, stream: int, node: int) -> np.random.Generator:
    key = np.array([seed & (2**64 - 1), (stream << 32) | node], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _pick(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Invert a cumulative distribution rowwise; cum has shape (N, k)."""
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


def sample_clean(model: TreeModel, N: int, seed: int) -> SampleMatrix:
    """Ancestral sampling: root from its marginal, children from conditionals."""
    if N < 1:
        raise ValueError("need at least one sample")
    n, k = model.n, model.k
    values = np.empty((N, n), dtype=np.uint8)
    u_root = _node_stream(seed, _CLEAN_STREAM, model.root).random(N)
    cum_root = np.cumsum(model.root_marginal)
    values[:, model.root] = _pick(np.broadcast_to(cum_root, (N, k)), u_root)
    adj = model.tree.adjacency()
    stack = [model.root]
    seen = {model.root}
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w in seen:
                continue
            seen.add(w)
            cum = np.cumsum(model.conditional(u, w), axis=0)  # (child, parent)
            draws = _node_stream(seed, _CLEAN_STREAM, w).random(N)
            values[:, w] = _pick(cum.T[values[:, u]], draws)
            stack.append(w)
    return SampleMatrix(values=values)


def apply_noise(samples: SampleMatrix, noise: NoiseSpec, seed: int, k: int) -> SampleMatrix:
    """Independently per cell, replace the symbol by a uniform draw w.p. q_i.

    The uniform replacement ranges over all k symbols, so it may reproduce
    the original; for k=2 the per-cell flip probability is q/2.
    """
    values = samples.values.copy()
    N = samples.N
    for v in range(samples.n):
        q = noise.q[v]
        if q == 0.0:
            continue
        u = _node_stream(seed, _NOISE_STREAM, v).random(N)
        hit = u < q
        repl = np.minimum((u[hit] / q * k).astype(np.uint8), k - 1)
        col = values[:, v]
        col[hit] = repl
        values[:, v] = col
    return SampleMatrix(values=values)


def empirical_pairwise(samples: SampleMatrix, k: int) -> PairwisePmfSet:
    """counts/N joint estimate for every pair, min-index-first orientation."""
    if samples.N < 1:
        raise ValueError("need at least one sample")
    vals = samples.values.astype(np.int64)
    n = samples.n
    pairs = {}
    for i in range(n):
        for j in range(i + 1, n):
            flat = vals[:, i] * k + vals[:, j]
            counts = np.bincount(flat, minlength=k * k).reshape(k, k)
            pairs[(i, j)] = counts / samples.N
    return PairwisePmfSet(
        n=n, k=k, pairs=pairs, source="empirical", sample_count=samples.N
    )


def save_samples(samples: SampleMatrix, k: int, path: str | Path) -> None:
    """Flat binary: magic, N, n, k header, then row-major uint8 symbols."""
    with open(path, "wb") as fh:
        fh.write(b"NTSM")
        fh.write(struct.pack("<QII", samples.N, samples.n, k))
        fh.write(samples.values.astype(np.uint8).tobytes())


def load_samples(path: str | Path) -> tuple[SampleMatrix, int]:
    raw = Path(path).read_bytes()
    if raw[:4] != b"NTSM":
        raise ValueError("not a sample dump")
    N, n, k = struct.unpack_from("<QII", raw, 4)
    off = 4 + struct.calcsize("<QII")
    values = np.frombuffer(raw, dtype=np.uint8, count=N * n, offset=off).reshape(N, n)
    return SampleMatrix(values=values.copy()), k


def save_samples_csv(samples: SampleMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{v}" for v in range(samples.n)])
        writer.writerows(samples.values.tolist())
