"""Equivalence-class machinery, recovery metrics, and the Chow-Liu baseline.

A leaf cluster is a leaf, its parent, and all sibling leaves.  Two trees are
in the same equivalence class when one is obtained from the other by
permuting nodes within leaf clusters, which structurally means: identical
cluster partitions and identical cluster-collapsed quotient trees.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Tree
from .oracle import PairwisePmfSet


@dataclass(frozen=True)
class LeafClusterSet:
    """Cluster partition of a tree plus its collapsed quotient.

    Super-nodes are identified by frozensets of original node ids (clusters
    collapse to their member set, other nodes stay singletons), which makes
    quotients of different trees on the same node set directly comparable.
    """

    clusters: tuple[frozenset[int], ...]
    hubs: dict[frozenset[int], int]
    quotient_edges: frozenset[frozenset[frozenset[int]]]

    def cluster_of(self, node: int) -> frozenset[int] | None:
        for c in self.clusters:
            if node in c:
                return c
        return None


def leaf_clusters(tree: Tree) -> LeafClusterSet:
    """Group each parent-of-leaves with all its leaf children."""
    if tree.n == 2:
        cluster = frozenset({0, 1})
        return LeafClusterSet(
            clusters=(cluster,), hubs={cluster: 0}, quotient_edges=frozenset()
        )
    adj = tree.adjacency()
    by_parent: dict[int, set[int]] = {}
    for leaf in tree.leaves():
        parent = adj[leaf][0]
        by_parent.setdefault(parent, set()).add(leaf)
    clusters = []
    hubs = {}
    super_of: dict[int, frozenset[int]] = {}
    for parent in sorted(by_parent):
        members = frozenset(by_parent[parent] | {parent})
        clusters.append(members)
        hubs[members] = parent
        for m in members:
            super_of[m] = members
    for v in range(tree.n):
        if v not in super_of:
            super_of[v] = frozenset({v})
    q_edges = set()
    for a, b in tree.edges:
        sa, sb = super_of[a], super_of[b]
        if sa != sb:
            q_edges.add(frozenset({sa, sb}))
    return LeafClusterSet(
        clusters=tuple(sorted(clusters, key=min)),
        hubs=hubs,
        quotient_edges=frozenset(q_edges),
    )


def same_equivalence_class(t1: Tree, t2: Tree) -> bool:
    """True iff t2 arises from t1 by within-leaf-cluster permutations."""
    if t1.n != t2.n:
        return False
    lc1, lc2 = leaf_clusters(t1), leaf_clusters(t2)
    if set(lc1.clusters) != set(lc2.clusters):
        return False
    return lc1.quotient_edges == lc2.quotient_edges


def in_t_sub(truth: Tree, truth_flags: set[int], candidate: Tree) -> bool:
    """Membership in the restricted class where only flagged leaves may swap.

    ``truth_flags`` holds the nodes that pass the center test (candidate
    parents).  The candidate must be in the equivalence class of the truth,
    and in every cluster its hub must be the true parent or a flagged member.
    """
    if not same_equivalence_class(truth, candidate):
        return False
    lc_truth = leaf_clusters(truth)
    lc_cand = leaf_clusters(candidate)
    for cluster in lc_truth.clusters:
        hub_t = lc_truth.hubs[cluster]
        hub_c = lc_cand.hubs[cluster]
        if hub_c != hub_t and hub_c not in truth_flags:
            return False
    return True


def enumerate_equivalence_class(tree: Tree) -> set[frozenset[tuple[int, int]]]:
    """Brute-force edge sets of all within-cluster permutations (test oracle)."""
    from itertools import permutations, product

    lc = leaf_clusters(tree)
    groups = [sorted(c) for c in lc.clusters]
    permss = [list(permutations(g)) for g in groups]
    out = set()
    for combo in product(*permss):
        mapping = {v: v for v in range(tree.n)}
        for g, perm in zip(groups, combo):
            for src, dst in zip(g, perm):
                mapping[src] = dst
        edges = frozenset(
            (min(mapping[a], mapping[b]), max(mapping[a], mapping[b]))
            for a, b in tree.edges
        )
        out.add(edges)
    return out


def mutual_information(P_ij: np.ndarray) -> float:
    """Natural-log mutual information of a joint PMF matrix, with 0 log 0 = 0."""
    P = np.asarray(P_ij, dtype=np.float64)
    row = P.sum(axis=1)
    col = P.sum(axis=0)
    mask = P > 0.0
    outer = row[:, None] * col[None, :]
    vals = P[mask] * (np.log(P[mask]) - np.log(outer[mask]))
    return float(vals.sum())


def chow_liu(pmfs: PairwisePmfSet) -> Tree:
    """Maximum-weight spanning tree on pairwise mutual information.

    Greedy forest merge with ties broken by lexicographic edge order.
    """
    n = pmfs.n
    weighted = [
        (-mutual_information(pmfs.joint(i, j)), i, j)
        for i in range(n)
        for j in range(i + 1, n)
    ]
    weighted.sort()
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for _, i, j in weighted:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.append((i, j))
            if len(edges) == n - 1:
                break
    return Tree(n, edges)


@dataclass(frozen=True)
class TrialScore:
    exact: bool
    eq_class: bool
    in_t_sub: bool


def score_trial(
    truth: Tree, truth_flags: set[int], outputs: dict[str, Tree]
) -> dict[str, TrialScore]:
    truth_edges = set(truth.edges)
    scores = {}
    for name, got in outputs.items():
        scores[name] = TrialScore(
            exact=set(got.edges) == truth_edges,
            eq_class=same_equivalence_class(truth, got),
            in_t_sub=in_t_sub(truth, truth_flags, got),
        )
    return scores


def append_trial_rows(
    path: str | Path,
    rows: list[tuple[int, str, int, bool, bool, bool, float]],
) -> None:
    """Append per-trial results: (trial, algorithm, N, exact, eq_class, in_t_sub, wall_ms)."""
    new = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(
                ["trial", "algorithm", "N", "exact", "eq_class", "in_t_sub", "wall_ms"]
            )
        for row in rows:
            writer.writerow(row)
