"""Population-level (exact) distributions of a tree model.

Everything here is deterministic linear algebra on the model's rooted
factorization: marginals propagate along root-to-node paths, pairwise joints
are path products of edge conditionals (with Bayes inversions when a path
step runs child-to-parent), and the brute-force full joint serves as the
test oracle for small instances.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import NoiseSpec, TreeModel

BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True, eq=False)
class PairwisePmfSet:
    """All C(n,2) pairwise joint PMF matrices, the algorithm's sole input.

    Matrices are stored min-index-first: ``pairs[(i, j)][a, b]`` with i < j
    is P(X_i = s_a, X_j = s_b).
    """

    n: int
    k: int
    pairs: dict[tuple[int, int], np.ndarray]
    source: str = "exact"
    sample_count: int | None = None

    def joint(self, i: int, j: int) -> np.ndarray:
        """Joint of (i, j) with rows indexed by i's symbols."""
        if i == j:
            raise ValueError("joint requires two distinct nodes")
        if i < j:
            return self.pairs[(i, j)]
        return self.pairs[(j, i)].T

    def marginal(self, i: int) -> np.ndarray:
        """Marginal of node i read off the pair with its smallest partner."""
        partner = 0 if i != 0 else 1
        return self.joint(i, partner).sum(axis=1)

    def marginals(self) -> np.ndarray:
        return np.stack([self.marginal(i) for i in range(self.n)])

    def validate(self, tol: float = 1e-9) -> None:
        for (i, j), mat in self.pairs.items():
            if np.any(mat < 0.0):
                raise ValueError(f"pair ({i},{j}) has negative entries")
            if abs(mat.sum() - 1.0) > tol:
                raise ValueError(f"pair ({i},{j}) does not sum to 1")
        for i in range(self.n):
            ref = None
            for j in range(self.n):
                if j == i:
                    continue
                marg = self.joint(i, j).sum(axis=1)
                if ref is None:
                    ref = marg
                elif np.max(np.abs(marg - ref)) > tol:
                    raise ValueError(f"inconsistent marginals for node {i}")


def error_matrix(q: float, k: int) -> np.ndarray:
    """Channel matrix of the k-ary symmetric channel: (1-q)*I + (q/k)*O."""
    return (1.0 - q) * np.eye(k) + (q / k) * np.ones((k, k))


def all_marginals(model: TreeModel) -> np.ndarray:
    """Marginal of every node, propagated from the root in one pass."""
    out = np.empty((model.n, model.k))
    out[model.root] = model.root_marginal
    adj = model.tree.adjacency()
    stack = [model.root]
    seen = {model.root}
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                out[w] = model.conditional(u, w) @ out[u]
                stack.append(w)
    return out


def exact_marginal(model: TreeModel, i: int) -> np.ndarray:
    """Marginal of node i via conditional products along the root-to-i path."""
    marg = np.array(model.root_marginal)
    path = model.tree.path(model.root, i)
    for u, v in zip(path, path[1:]):
        marg = model.conditional(u, v) @ marg
    return marg


def _step_matrix(
    model: TreeModel, margs: np.ndarray, parents: dict[int, int], u: int, v: int
) -> np.ndarray:
    """K[b, a] = P(X_v = s_b | X_u = s_a) for adjacent u, v."""
    if parents.get(v) == u:
        return model.conditional(u, v)
    # walking child -> parent: Bayes-invert the stored conditional
    m = model.conditional(v, u)  # P(u | v)
    num = m.T * margs[v][:, None]  # [b, a] = P(u=a|v=b) * P(v=b)
    denom = margs[u][None, :]
    if np.any(denom <= 0.0):
        raise ZeroDivisionError(f"zero marginal entry at node {u} blocks Bayes inversion")
    return num / denom


def exact_pairwise_pmf(model: TreeModel, i: int, j: int) -> np.ndarray:
    """P_ij[a, b] = P(X_i = s_a, X_j = s_b) along the unique i-to-j path."""
    if i == j:
        raise ValueError("pairwise PMF requires two distinct nodes")
    margs = all_marginals(model)
    parents = model.parent_map()
    path = model.tree.path(i, j)
    cond = np.eye(model.k)
    for u, v in zip(path, path[1:]):
        cond = _step_matrix(model, margs, parents, u, v) @ cond
    # cond[b, a] = P(X_j = b | X_i = a)
    return cond.T * margs[i][:, None]


def noisy_pairwise_pmf(model: TreeModel, noise: NoiseSpec, i: int, j: int) -> np.ndarray:
    """E_i @ P_ij @ E_j, the joint of the channel outputs."""
    clean = exact_pairwise_pmf(model, i, j)
    return error_matrix(noise.q[i], model.k) @ clean @ error_matrix(noise.q[j], model.k)


def exact_pairwise_set(model: TreeModel, noise: NoiseSpec | None = None) -> PairwisePmfSet:
    pairs = {}
    for i in range(model.n):
        for j in range(i + 1, model.n):
            if noise is None:
                pairs[(i, j)] = exact_pairwise_pmf(model, i, j)
            else:
                pairs[(i, j)] = noisy_pairwise_pmf(model, noise, i, j)
    return PairwisePmfSet(n=model.n, k=model.k, pairs=pairs, source="exact")


def brute_force_joint(model: TreeModel) -> np.ndarray:
    """Full joint table of shape (k,)*n by multiplying factorization terms."""
    n, k = model.n, model.k
    if k**n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"k^n = {k**n} exceeds the brute-force limit")
    shape = [1] * n
    shape[model.root] = k
    table = model.root_marginal.reshape(shape).copy()
    for (p, c), mat in model.edge_conditionals.items():
        # arrange the (child_state, parent_state) matrix on axes (min, max)
        block = mat if c < p else mat.T
        shape = [1] * n
        shape[min(p, c)] = k
        shape[max(p, c)] = k
        table = table * block.reshape(shape)
    return table


def marginalize(table: np.ndarray, keep: tuple[int, ...]) -> np.ndarray:
    """Sum a full joint table onto the given axes (in the given order)."""
    drop = tuple(ax for ax in range(table.ndim) if ax not in keep)
    out = table.sum(axis=drop)
    order = sorted(keep)
    return np.transpose(out, axes=[order.index(ax) for ax in keep])


def save_pmf_set(pmfs: PairwisePmfSet, path: str | Path) -> None:
    doc = {
        "n": pmfs.n,
        "k": pmfs.k,
        "source": pmfs.source,
        "sample_count": pmfs.sample_count,
        "pairs": {
            f"{i}-{j}": [float(x) for x in mat.reshape(-1)]
            for (i, j), mat in sorted(pmfs.pairs.items())
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_pmf_set(path: str | Path) -> PairwisePmfSet:
    doc = json.loads(Path(path).read_text())
    k = int(doc["k"])
    pairs = {}
    for key, flat in doc["pairs"].items():
        i, j = (int(x) for x in key.split("-"))
        pairs[(i, j)] = np.array(flat, dtype=np.float64).reshape(k, k)
    return PairwisePmfSet(
        n=int(doc["n"]),
        k=k,
        pairs=pairs,
        source=doc["source"],
        sample_count=doc["sample_count"],
    )


def dump_pmf_set(pmfs: PairwisePmfSet, path: str | Path) -> None:
    """Compact binary dump: header then little-endian float64 matrices."""
    with open(path, "wb") as fh:
        fh.write(b"NTPM")
        fh.write(
            struct.pack(
                "<IIIQ", pmfs.n, pmfs.k, len(pmfs.pairs), pmfs.sample_count or 0
            )
        )
        for (i, j), mat in sorted(pmfs.pairs.items()):
            fh.write(struct.pack("<II", i, j))
            fh.write(mat.astype("<f8").tobytes())


def read_pmf_dump(path: str | Path) -> PairwisePmfSet:
    raw = Path(path).read_bytes()
    if raw[:4] != b"NTPM":
        raise ValueError("not a pairwise PMF dump")
    n, k, count, samples = struct.unpack_from("<IIIQ", raw, 4)
    off = 4 + struct.calcsize("<IIIQ")
    pairs = {}
    for _ in range(count):
        i, j = struct.unpack_from("<II", raw, off)
        off += 8
        mat = np.frombuffer(raw, dtype="<f8", count=k * k, offset=off).reshape(k, k)
        off += 8 * k * k
        pairs[(i, j)] = mat.copy()
    return PairwisePmfSet(
        n=n,
        k=k,
        pairs=pairs,
        source="empirical" if samples else "exact",
        sample_count=int(samples) or None,
    )
