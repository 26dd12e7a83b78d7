"""Matrix-quadratic center test.

For a triplet (a, b, c) with b as the tested center, the noise parameter x
of b must satisfy  (x^2/k^2)(O - kI) - (x/k)(O P_b + P_b O - k P_b - I)
+ P_bc P_ac^{-1} P_ab - P_b = 0  entrywise whenever the observations are
consistent with a .. b .. c conditional-independence chain.  The test
estimates a common root of the k^2 entry quadratics and reports the
Frobenius norm of the matrix polynomial at that root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .oracle import PairwisePmfSet

SINGULAR_DET_TOL = 1e-12
DEGENERATE_COEF_TOL = 1e-14


class SingularTripletError(ValueError):
    """The cross matrix P_{a',c'} of a triplet is numerically singular."""

    def __init__(self, pair: tuple[int, int]):
        super().__init__(f"singular cross matrix for pair {pair}")
        self.pair = pair


@dataclass(frozen=True, eq=False)
class MatrixQuadratic:
    """Coefficients of the entrywise test polynomial x^2*quad + x*lin + const."""

    quad: np.ndarray
    lin: np.ndarray
    const: np.ndarray

    @property
    def k(self) -> int:
        return self.quad.shape[0]

    def value(self, x: float) -> np.ndarray:
        return self.quad * x * x + self.lin * x + self.const

    def residual_at(self, x: float) -> float:
        return float(np.linalg.norm(self.value(x)))


@dataclass(frozen=True, eq=False)
class RootResult:
    """Outcome of the center test for one triplet and one candidate center."""

    mean_root: float
    residual: float
    per_entry_roots: np.ndarray
    feasible: bool


def quad_coefficients(pmfs: PairwisePmfSet, triplet: tuple[int, int, int]) -> MatrixQuadratic:
    """Build the matrix quadratic for the middle element of the triplet.

    Raises SingularTripletError when the joint of the two outer nodes cannot
    be inverted; callers scanning third nodes should skip such triplets.
    """
    a, b, c = triplet
    k = pmfs.k
    cross = pmfs.joint(a, c)
    if abs(np.linalg.det(cross)) <= SINGULAR_DET_TOL:
        raise SingularTripletError((a, c))
    ones = np.ones((k, k))
    eye = np.eye(k)
    p_b = np.diag(pmfs.marginal(b))
    quad = (ones - k * eye) / k**2
    lin = -(ones @ p_b + p_b @ ones - k * p_b - eye) / k
    const = pmfs.joint(b, c) @ np.linalg.inv(cross) @ pmfs.joint(a, b) - p_b
    return MatrixQuadratic(quad=quad, lin=lin, const=const)


def _entry_root(a2: float, a1: float, a0: float, q_max: float) -> float | None:
    """Root of one entry quadratic under the deterministic selection rule.

    Preference order: real root inside [0, q_max] (smaller wins), then the
    real root nearest the interval, then the clamped vertex when the
    discriminant is negative.  Degenerate entries fall through to the linear
    root; fully degenerate entries contribute nothing (None).
    """
    if abs(a2) < DEGENERATE_COEF_TOL:
        if abs(a1) < DEGENERATE_COEF_TOL:
            return None
        return -a0 / a1
    disc = a1 * a1 - 4.0 * a2 * a0
    if disc < 0.0:
        return min(max(-a1 / (2.0 * a2), 0.0), q_max)
    sq = math.sqrt(disc)
    roots = sorted(((-a1 - sq) / (2.0 * a2), (-a1 + sq) / (2.0 * a2)))
    inside = [r for r in roots if 0.0 <= r <= q_max]
    if inside:
        return inside[0]

    def gap(r: float) -> float:
        return max(0.0 - r, r - q_max, 0.0)

    return min(roots, key=lambda r: (gap(r), r))


def per_entry_roots(mq: MatrixQuadratic, q_max: float) -> np.ndarray:
    """Selected root of each entry quadratic; NaN for degenerate entries."""
    k = mq.k
    out = np.full((k, k), np.nan)
    for i in range(k):
        for j in range(k):
            r = _entry_root(mq.quad[i, j], mq.lin[i, j], mq.const[i, j], q_max)
            if r is not None:
                out[i, j] = r
    return out


def mean_root(mq: MatrixQuadratic, q_max: float = 1.0) -> float:
    """Average of the selected per-entry roots over contributing entries."""
    roots = per_entry_roots(mq, q_max)
    good = roots[np.isfinite(roots)]
    if good.size == 0:
        return 0.0
    return float(good.mean())


def quadratic_error(
    pmfs: PairwisePmfSet,
    triplet: tuple[int, int, int],
    center: int,
    q_max: float = 1.0,
    t_0: float | None = None,
) -> RootResult:
    """Center test: residual of the matrix quadratic at the mean root.

    The triplet is reordered so that ``center`` is the tested middle node.
    Feasibility means the mean root lies in [0, q_max]; when t_0 is known the
    residual must additionally stay below t_0/2.
    """
    if center not in triplet:
        raise ValueError("center must be one of the triplet nodes")
    outer = [v for v in triplet if v != center]
    mq = quad_coefficients(pmfs, (outer[0], center, outer[1]))
    roots = per_entry_roots(mq, q_max)
    good = roots[np.isfinite(roots)]
    x = float(good.mean()) if good.size else 0.0
    residual = mq.residual_at(x)
    feasible = 0.0 <= x <= q_max
    if t_0 is not None:
        feasible = feasible and residual < t_0 / 2.0
    return RootResult(mean_root=x, residual=residual, per_entry_roots=roots, feasible=feasible)


def min_residual(
    mq: MatrixQuadratic, q_max: float, grid: int = 1000
) -> tuple[float, float]:
    """Minimize the Frobenius residual over x in [0, q_max].

    Coarse grid scan followed by golden-section refinement around the best
    grid cell; unimodality is not guaranteed, hence the grid.
    """
    xs = np.linspace(0.0, q_max, grid + 1)
    vals = [mq.residual_at(x) for x in xs]
    best = int(np.argmin(vals))
    lo = xs[max(best - 1, 0)]
    hi = xs[min(best + 1, grid)]
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = mq.residual_at(c), mq.residual_at(d)
    for _ in range(80):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = mq.residual_at(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = mq.residual_at(d)
    x = (a + b) / 2.0
    return x, mq.residual_at(x)


def binary_quadratic_check(P_21: np.ndarray) -> float:
    """The in-[0,1] root of the k=2 entry quadratic x^2/4 - x/2 + s.

    s is the sum of per-column products over column sums of the joint of the
    tested center (rows) and the other node (columns); the root always exists
    for a full-rank joint.
    """
    P = np.asarray(P_21, dtype=np.float64)
    if P.shape != (2, 2):
        raise ValueError("binary check requires a 2x2 joint")
    if abs(np.linalg.det(P)) <= SINGULAR_DET_TOL:
        raise ValueError("rank-deficient joint")
    s = 0.0
    for col in range(2):
        top = P[0, col] * P[1, col]
        bottom = P[0, col] + P[1, col]
        if bottom > 0.0:
            s += top / bottom
    disc = 1.0 - 4.0 * s
    if disc < 0.0:
        disc = 0.0  # s <= 1/4 holds for every PMF; guard rounding only
    return 1.0 - math.sqrt(disc)
