"""Iterative structure recovery from noisy pairwise PMFs.

The driver keeps an active set of nodes that forms a subtree, repeatedly
extracts a (leaf, parent) pair, removes the leaf, and finally joins the last
two survivors.  Leaf-parent pairs are located by walking a probe node
through distance-ordered neighborhoods and classifying quartets as
star/non-star; ambiguity inside a leaf cluster is resolved (when possible)
by the matrix-quadratic center test.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Literal

import numpy as np

from .metric import (
    DistanceTable,
    all_neighborhoods,
    distance_table,
    eta_max,
    neighborhood_threshold,
)
from .model import AlgoParams, Tree
from .oracle import PairwisePmfSet
from .quadtest import SingularTripletError, quadratic_error


class RecoveryError(RuntimeError):
    """Recovery cannot proceed; carries the offending node pair."""

    def __init__(self, pair: tuple[int, int], message: str):
        super().__init__(f"{message} (pair {pair})")
        self.pair = pair


@dataclass(frozen=True)
class QuartetVerdict:
    kind: Literal["star", "nonstar", "fail"]
    partition: tuple[frozenset[int], frozenset[int]] | None = None

    def pair_of(self, node: int) -> int:
        """The node sharing ``node``'s side of a non-star partition."""
        assert self.kind == "nonstar" and self.partition is not None
        for side in self.partition:
            if node in side:
                (other,) = side - {node}
                return other
        raise ValueError(f"{node} is not in the quartet")


STAR = QuartetVerdict(kind="star")
FAIL = QuartetVerdict(kind="fail")


def classify_quartet(
    quartet: tuple[int, int, int, int],
    kappa_at: Callable[[int, int], float],
    kappa_max: float,
) -> QuartetVerdict:
    """Star / non-star / fail decision from the six pairwise kappa values.

    With s_p the summed distance of pairing p, the quartet is a non-star
    with pairing p when exp(s_p - (s_q + s_r)/2) <= (1 + kappa_max^2)/2 and
    the two cross ratios are >= 1; a star when all three ratios clear the
    (1 + kappa_max^2)/2 threshold.  Any nonpositive or non-finite kappa
    fails the test outright.
    """
    a, b, c, d = quartet
    dist = {}
    for x, y in ((a, b), (a, c), (a, d), (b, c), (b, d), (c, d)):
        val = kappa_at(x, y)
        if not (math.isfinite(val) and val > 0.0):
            return FAIL
        dist[frozenset((x, y))] = -math.log(val)

    def s(p1: tuple[int, int], p2: tuple[int, int]) -> float:
        return dist[frozenset(p1)] + dist[frozenset(p2)]

    pairings = (((a, b), (c, d)), ((a, c), (b, d)), ((a, d), (b, c)))
    sums = [s(*p) for p in pairings]
    log_thresh = math.log((1.0 + kappa_max**2) / 2.0)
    ratios = []
    for idx in range(3):
        others = [sums[m] for m in range(3) if m != idx]
        ratios.append(sums[idx] - (others[0] + others[1]) / 2.0)  # log scale
    for idx, (p1, p2) in enumerate(pairings):
        others = [ratios[m] for m in range(3) if m != idx]
        if ratios[idx] <= log_thresh and all(r >= 0.0 for r in others):
            return QuartetVerdict(
                kind="nonstar", partition=(frozenset(p1), frozenset(p2))
            )
    if all(r >= log_thresh for r in ratios):
        return STAR
    return FAIL


def find_center(
    dist: DistanceTable,
    neighborhoods: list[list[int]],
    triplet: tuple[int, int, int],
    recovered_edges: Iterable[tuple[int, int]],
    kappa_max: float,
) -> set[int]:
    """Candidate center nodes of a triplet after quartet-based elimination.

    Every common neighbor j votes: a non-star verdict removes the triplet
    member paired with j.  Neighbors already wired to a triplet member by a
    recovered edge vote as one bloc whose majority verdict (ties resolved by
    the lowest-index member, fails skipped) eliminates that member.
    """
    x, y, z = triplet
    candidates = {x, y, z}
    common = sorted(
        set(neighborhoods[x]) & set(neighborhoods[y]) & set(neighborhoods[z])
    )
    edge_set = {frozenset(e) for e in recovered_edges}
    blocs: dict[int, list[int]] = {x: [], y: [], z: []}
    loose: list[int] = []
    for j in common:
        for m in (x, y, z):
            if frozenset((j, m)) in edge_set:
                blocs[m].append(j)
                break
        else:
            loose.append(j)

    for m in (x, y, z):
        if not blocs[m]:
            continue
        verdicts = {
            j: classify_quartet((x, y, z, j), dist.kappa_at, kappa_max)
            for j in blocs[m]
        }
        nonstar = sum(1 for v in verdicts.values() if v.kind == "nonstar")
        star = sum(1 for v in verdicts.values() if v.kind == "star")
        if nonstar > star:
            bloc_kind = "nonstar"
        elif star > nonstar:
            bloc_kind = "star"
        else:
            bloc_kind = verdicts[min(blocs[m])].kind
        if bloc_kind == "nonstar":
            candidates.discard(m)

    for j in loose:
        verdict = classify_quartet((x, y, z, j), dist.kappa_at, kappa_max)
        if verdict.kind != "nonstar":
            continue
        partner = verdict.pair_of(j)
        assert partner in (x, y, z)
        candidates.discard(partner)
    return candidates


@dataclass(frozen=True)
class RecoveredStructure:
    """Edge list plus per-leaf-cluster identifiability flags.

    ``leaf_cluster_flags`` maps each leaf cluster of the recovered tree to
    the members passing the center test (None = undetermined); it stays
    empty until expand_equivalence_class runs.
    """

    edges: tuple[tuple[int, int], ...]
    parents: frozenset[int]
    leaf_cluster_flags: dict[frozenset[int], frozenset[int] | None] | None = None

    def tree(self) -> Tree:
        return Tree(len(self.edges) + 1, self.edges)

    def flagged_nodes(self) -> set[int]:
        out: set[int] = set()
        for members in (self.leaf_cluster_flags or {}).values():
            if members:
                out |= members
        return out


@dataclass
class _Pipeline:
    """Shared read-only state for one recovery run."""

    pmfs: PairwisePmfSet
    dist: DistanceTable
    neighborhoods: list[list[int]]
    params: AlgoParams
    eta: float

    @property
    def kappa_max(self) -> float:
        return self.params.kappa_max


def _prepare(pmfs: PairwisePmfSet, params: AlgoParams) -> _Pipeline:
    dist = distance_table(pmfs)
    eta = eta_max(pmfs.k, params.q_max, params.p_min)
    thresh = neighborhood_threshold(params.d_max, eta, params.neighborhood_scale)
    return _Pipeline(
        pmfs=pmfs,
        dist=dist,
        neighborhoods=all_neighborhoods(dist, thresh),
        params=params,
        eta=eta,
    )


def leaf_cluster_resolution(
    pipe: _Pipeline,
    candidates: set[int],
    parents: set[int],
    recovered_edges: list[tuple[int, int]],
) -> tuple[int, int]:
    """Pick the parent inside a leaf cluster; returns (leaf, parent).

    A previously confirmed parent short-circuits.  Otherwise every pair from
    the candidate set is combined with common-neighborhood third nodes; a
    third node also living in the cluster (center test cannot separate it,
    and it is within d_max + 2*eta of both) competes as a parent candidate
    too.  The node with the minimum quadratic residual wins; with t_0 known,
    only residuals below t_0/2 count.

    Residuals are compared rounded to 1e-12 with established parents winning
    ties: in the unidentifiable case all cluster members sit at residual
    ~1e-16 and comparing raw floats would re-elect a different stand-in hub
    on every call, tearing the cluster apart.
    """
    confirmed = sorted(candidates & parents)
    if confirmed:
        parent = confirmed[0]
        leaf = sorted(candidates - {parent})[0]
        return leaf, parent

    params = pipe.params
    guard = params.d_max + 2.0 * pipe.eta

    def rank(residual: float, node: int) -> tuple[float, int, int]:
        return (round(residual, 12), 0 if node in parents else 1, node)

    best: tuple[float, int, int] | None = None
    best_any: tuple[float, int, int] | None = None
    for i1 in sorted(candidates):
        for i2 in sorted(candidates):
            if i2 <= i1:
                continue
            common = [
                j
                for j in pipe.neighborhoods[i1]
                if j in set(pipe.neighborhoods[i2]) and j not in (i1, i2)
            ]
            for i3 in common:
                center_cands = find_center(
                    pipe.dist,
                    pipe.neighborhoods,
                    (i1, i2, i3),
                    recovered_edges,
                    pipe.kappa_max,
                )
                same_cluster = (
                    i3 in center_cands
                    and pipe.dist.at(i3, i1) <= guard
                    and pipe.dist.at(i3, i2) <= guard
                )
                roles = (i1, i2, i3) if same_cluster else (i1, i2)
                for node in roles:
                    try:
                        result = quadratic_error(
                            pipe.pmfs,
                            (i1, i2, i3),
                            center=node,
                            q_max=params.q_max,
                            t_0=params.t_0,
                        )
                    except SingularTripletError:
                        continue
                    key = rank(result.residual, node)
                    if best_any is None or key < best_any:
                        best_any = key
                    if params.t_0 is not None and result.residual >= params.t_0 / 2.0:
                        continue
                    if best is None or key < best:
                        best = key
    chosen = best or best_any
    if chosen is None:
        # no usable third node anywhere: fall back to the lowest index
        parent = sorted(candidates)[0]
    else:
        parent = chosen[2]
    rest = sorted(candidates - {parent})
    leaf = rest[0] if rest else sorted(candidates)[0]
    return leaf, parent


def get_leaf_parent(
    pipe: _Pipeline,
    active: list[int],
    recovered_edges: list[tuple[int, int]],
    parents: set[int],
    rng: np.random.Generator | None = None,
) -> tuple[int, int]:
    """Walk a probe through neighborhoods until a leaf-parent pair emerges.

    Maintains a left node l and right node r; probing z through N(r) in
    distance order shifts the pair rightward (center z pulls l to z, center
    r advances both) until the probe meets a leaf cluster.  Returns
    (leaf, parent).
    """
    active_set = set(active)
    surviving = sorted(parents & active_set)
    if surviving:
        r = surviving[0]
    elif rng is not None:
        r = int(rng.choice(sorted(active_set)))
    else:
        r = min(active_set)
    l = _nearest_active(pipe, r, active_set)
    visited = {l, r}
    l_r_order = False
    i = 0
    while i < len(pipe.neighborhoods[r]):
        z = pipe.neighborhoods[r][i]
        if z in visited or z not in active_set:
            i += 1
            continue
        visited.add(z)
        cands = find_center(
            pipe.dist, pipe.neighborhoods, (l, r, z), recovered_edges, pipe.kappa_max
        )
        if len(cands) == 1:
            l_r_order = True
        if cands == {z}:
            l = z
        elif cands == {r}:
            l, r = r, z
            i = 0
        elif len(cands) > 1:
            if l_r_order and l in cands and r in cands:
                return r, l
            return leaf_cluster_resolution(pipe, cands, parents, recovered_edges)
    # neighborhood exhausted: the walk has settled with r on the leaf side
    # and l toward the interior, so declare (r, l) as the pair
    return r, l


def _nearest_active(pipe: _Pipeline, r: int, active_set: set[int]) -> int:
    for j in pipe.neighborhoods[r]:
        if j in active_set and j != r:
            return j
    # nothing within the threshold: take the nearest finite-distance node
    best = None
    for j in sorted(active_set):
        if j == r or not math.isfinite(pipe.dist.at(r, j)):
            continue
        if best is None or pipe.dist.at(r, j) < pipe.dist.at(r, best):
            best = j
    if best is None:
        other = min(m for m in active_set if m != r)
        raise RecoveryError((r, other), "node has no finite-distance companion")
    return best


def find_tree(pmfs: PairwisePmfSet, params: AlgoParams) -> RecoveredStructure:
    """Recover the full edge list from pairwise PMFs (Algorithm driver)."""
    n = pmfs.n
    if n < 2:
        raise ValueError("need at least two nodes")
    if n == 2:
        return RecoveredStructure(edges=((0, 1),), parents=frozenset())
    pipe = _prepare(pmfs, params)
    rng = (
        np.random.default_rng(params.seed) if params.randomized_init else None
    )
    active = list(range(n))
    edges: list[tuple[int, int]] = []
    parents: set[int] = set()
    while len(active) > 2:
        leaf, parent = get_leaf_parent(pipe, active, edges, parents, rng)
        active.remove(leaf)
        edges.append((min(leaf, parent), max(leaf, parent)))
        parents.add(parent)
    edges.append((min(active[0], active[1]), max(active[0], active[1])))
    return RecoveredStructure(edges=tuple(edges), parents=frozenset(parents))


def expand_equivalence_class(
    structure: RecoveredStructure, pmfs: PairwisePmfSet, params: AlgoParams
) -> RecoveredStructure:
    """Flag, per leaf cluster, every member passing the center test.

    Each member is tested as the center of a triplet made of a companion
    from its own cluster and the nearest outside third node; residual below
    t_0/2 flags the member as a candidate parent.  Clusters with no usable
    outside node map to None (undetermined).
    """
    if params.t_0 is None:
        raise ValueError("expand_equivalence_class requires a known t_0")
    from .evalkit import leaf_clusters

    tree = structure.tree()
    lc = leaf_clusters(tree)
    dist = distance_table(pmfs)
    flags: dict[frozenset[int], frozenset[int] | None] = {}
    for cluster in lc.clusters:
        hub = lc.hubs[cluster]
        outside = [v for v in range(tree.n) if v not in cluster]
        if not outside:
            flags[cluster] = None
            continue
        flagged = set()
        undetermined = False
        for member in sorted(cluster):
            companion = hub if member != hub else min(cluster - {member})
            ranked = sorted(outside, key=lambda v: (dist.at(companion, v), v))
            result = None
            for third in ranked:
                try:
                    result = quadratic_error(
                        pmfs,
                        (companion, member, third),
                        center=member,
                        q_max=params.q_max,
                        t_0=params.t_0,
                    )
                except SingularTripletError:
                    continue
                break
            if result is None:
                undetermined = True
                break
            if result.residual < params.t_0 / 2.0:
                flagged.add(member)
        flags[cluster] = None if undetermined else frozenset(flagged)
    return replace(structure, leaf_cluster_flags=flags)


def save_structure(structure: RecoveredStructure, path: str | Path) -> None:
    doc = {
        "edges": [list(e) for e in structure.edges],
        "parents": sorted(structure.parents),
        "leaf_cluster_flags": None
        if structure.leaf_cluster_flags is None
        else {
            ",".join(map(str, sorted(cluster))): (
                sorted(members) if members is not None else None
            )
            for cluster, members in structure.leaf_cluster_flags.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def save_edge_list(structure: RecoveredStructure, path: str | Path) -> None:
    lines = [f"{a} {b}" for a, b in sorted(structure.edges)]
    Path(path).write_text("\n".join(lines) + "\n")
