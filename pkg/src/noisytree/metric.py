"""Information distances and the neighborhood machinery built on them.

The distance between two discrete variables with joint PMF matrix P_ij and
marginals P_i, P_j is ``-log(|det P_ij| / sqrt(det P_i * det P_j))``.  It is
additive along tree paths and inflates under independent per-node noise,
which is what every downstream test relies on.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DET_UNDERFLOW = 1e-300
MAX_SUPPORT = 16


def info_distance(P_ij: np.ndarray, P_i: np.ndarray, P_j: np.ndarray) -> float:
    """Pairwise information distance; +inf when |det P_ij| underflows.

    Marginals are passed as length-k vectors; det of the diagonal marginal
    matrix is their product.  Raises on nonpositive marginal entries.
    """
    P_ij = np.asarray(P_ij, dtype=np.float64)
    k = P_ij.shape[0]
    if k > MAX_SUPPORT:
        raise ValueError(f"support size {k} exceeds the {MAX_SUPPORT} limit")
    P_i = np.asarray(P_i, dtype=np.float64)
    P_j = np.asarray(P_j, dtype=np.float64)
    if np.any(P_i <= 0.0) or np.any(P_j <= 0.0):
        raise ValueError("marginal entries must be positive")
    sign, logabsdet = np.linalg.slogdet(P_ij)
    if sign == 0.0 or logabsdet <= math.log(DET_UNDERFLOW):
        return math.inf
    return -logabsdet + 0.5 * (np.log(P_i).sum() + np.log(P_j).sum())


@dataclass(frozen=True, eq=False)
class DistanceTable:
    """Symmetric matrix of pairwise distances plus kappa = exp(-d)."""

    n: int
    d: np.ndarray
    kappa: np.ndarray

    def kappa_at(self, i: int, j: int) -> float:
        return float(self.kappa[i, j])

    def at(self, i: int, j: int) -> float:
        return float(self.d[i, j])


def build_table(d: np.ndarray) -> DistanceTable:
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    if not np.array_equal(d, d.T):
        raise ValueError("distance matrix must be symmetric")
    with np.errstate(over="ignore"):
        kappa = np.exp(-d)
    tab = DistanceTable(n=n, d=d, kappa=kappa)
    d.setflags(write=False)
    kappa.setflags(write=False)
    return tab


def distance_table(pmfs) -> DistanceTable:
    """Distances between all pairs of a PairwisePmfSet.

    Pairs whose empirical joint is singular, or whose empirical marginals
    have zero mass somewhere, get distance +inf and are later excluded from
    neighborhoods instead of raising.
    """
    n = pmfs.n
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            joint = pmfs.joint(i, j)
            p_i = joint.sum(axis=1)
            p_j = joint.sum(axis=0)
            if np.any(p_i <= 0.0) or np.any(p_j <= 0.0):
                val = math.inf
            else:
                val = info_distance(joint, p_i, p_j)
            d[i, j] = d[j, i] = val
    return build_table(d)


def eta_max(k: int, q_max: float, p_min: float) -> float:
    """Upper bound on the distance between a node and its noisy observation:
    (1-k)*log(1-q_max) - 0.5*k*log(k*p_min).
    """
    if not 0.0 <= q_max < 1.0:
        raise ValueError(f"q_max must lie in [0, 1), got {q_max}")
    if not 0.0 < p_min <= 1.0 / k:
        raise ValueError(f"p_min must lie in (0, 1/k], got {p_min}")
    return (1 - k) * math.log(1.0 - q_max) - 0.5 * k * math.log(k * p_min)


def neighborhood_threshold(d_max: float, eta: float, scale: float = 1.0) -> float:
    return scale * (4.0 * d_max + 3.0 * eta)


def neighborhood(dist: DistanceTable, i: int, threshold: float) -> list[int]:
    """Nodes within the threshold of i, ascending by distance, ties by index.

    Non-finite distances (singular empirical estimates) are excluded outright.
    """
    row = dist.d[i]
    members = [
        j
        for j in range(dist.n)
        if j != i and math.isfinite(row[j]) and row[j] <= threshold
    ]
    members.sort(key=lambda j: (row[j], j))
    return members


def all_neighborhoods(dist: DistanceTable, threshold: float) -> list[list[int]]:
    return [neighborhood(dist, i, threshold) for i in range(dist.n)]


@dataclass(frozen=True)
class BoundEstimates:
    """Data-driven parameter bounds; absent fields were not applicable."""

    d_max_upper: float
    d_min_lower: float | None
    p_min_lower: float | None


def estimate_bounds(
    dist: DistanceTable,
    eta: float,
    q_max: float,
    noisy_marginals: np.ndarray,
) -> BoundEstimates:
    """Bounds on d_max, d_min and p_min from noisy-node quantities alone.

    d_max_upper = max_i min_{j != i} d[i][j]; the d_min and p_min bounds are
    reported only when the corrections leave them positive.
    """
    nearest = []
    for i in range(dist.n):
        row = [dist.d[i, j] for j in range(dist.n) if j != i]
        nearest.append(min(row))
    d_max_upper = max(nearest)
    d_min_lower = min(nearest) - 2.0 * eta
    p_min_lower = float(np.min(noisy_marginals)) - q_max
    return BoundEstimates(
        d_max_upper=d_max_upper,
        d_min_lower=d_min_lower if d_min_lower > 0.0 else None,
        p_min_lower=p_min_lower if p_min_lower > 0.0 else None,
    )


def save_table_csv(dist: DistanceTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "d", "kappa"])
        for i in range(dist.n):
            for j in range(i + 1, dist.n):
                writer.writerow([i, j, repr(dist.d[i, j]), repr(dist.kappa[i, j])])
