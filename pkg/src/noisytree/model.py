"""Ground-truth tree models on discrete variables with a common support.

A model is a tree together with a root marginal and one column-stochastic
conditional matrix per edge, directed away from the root.  Two closed-form
families are provided: symmetric models (uniform marginals, conditionals of
the form ``alpha*I + (1-alpha)*O/k``) and their cyclically perturbed variant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .metric import info_distance

DET_TOL = 1e-12
STOCHASTIC_TOL = 1e-12


class ModelError(ValueError):
    """Raised when a tree or model violates its construction invariants."""


@dataclass(frozen=True)
class Tree:
    """Undirected tree on nodes ``0 .. n-1``."""

    n: int
    edges: tuple[tuple[int, int], ...]

    def __init__(self, n: int, edges: Sequence[Sequence[int]]):
        if n < 2:
            raise ModelError(f"need at least 2 nodes, got {n}")
        norm = []
        seen = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise ModelError(f"self-loop at node {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise ModelError(f"edge ({a},{b}) out of range for n={n}")
            e = (min(a, b), max(a, b))
            if e in seen:
                raise ModelError(f"duplicate edge {e}")
            seen.add(e)
            norm.append(e)
        if len(norm) != n - 1:
            raise ModelError(f"expected {n - 1} edges, got {len(norm)}")
        # connectivity check via union-find; n-1 edges + connected => acyclic
        parent = list(range(n))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in norm:
            ra, rb = find(a), find(b)
            if ra == rb:
                raise ModelError(f"cycle introduced by edge ({a},{b})")
            parent[ra] = rb
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", tuple(sorted(norm)))

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {v: [] for v in range(self.n)}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        for v in adj:
            adj[v].sort()
        return adj

    def degrees(self) -> list[int]:
        deg = [0] * self.n
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def leaves(self) -> list[int]:
        return [v for v, d in enumerate(self.degrees()) if d == 1]

    def path(self, i: int, j: int) -> list[int]:
        """Unique path from i to j, inclusive."""
        if i == j:
            return [i]
        adj = self.adjacency()
        prev = {i: i}
        stack = [i]
        while stack:
            u = stack.pop()
            if u == j:
                break
            for w in adj[u]:
                if w not in prev:
                    prev[w] = u
                    stack.append(w)
        path = [j]
        while path[-1] != i:
            path.append(prev[path[-1]])
        path.reverse()
        return path

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in set(self.edges)


def chain_tree(n: int) -> Tree:
    return Tree(n, [(i, i + 1) for i in range(n - 1)])


def star_tree(n: int, hub: int = 0) -> Tree:
    return Tree(n, [(hub, v) for v in range(n) if v != hub])


def random_tree(n: int, rng: np.random.Generator) -> Tree:
    """Uniform labeled tree via a random Pruefer sequence."""
    if n == 2:
        return Tree(2, [(0, 1)])
    seq = [int(rng.integers(0, n)) for _ in range(n - 2)]
    return tree_from_pruefer(n, seq)


def tree_from_pruefer(n: int, seq: Sequence[int]) -> Tree:
    degree = [1] * n
    for v in seq:
        degree[v] += 1
    edges = []
    import heapq

    leaves = [v for v in range(n) if degree[v] == 1]
    heapq.heapify(leaves)
    for v in seq:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, v))
        degree[v] -= 1
        if degree[v] == 1:
            heapq.heappush(leaves, v)
    u, w = sorted(leaves)[:2]
    edges.append((u, w))
    return Tree(n, edges)


def all_tree_shapes(n: int) -> list[Tree]:
    """One labeled representative per isomorphism class of trees on n nodes."""
    if n == 2:
        return [Tree(2, [(0, 1)])]
    reps: dict[str, Tree] = {}
    for code in range(n ** (n - 2)):
        seq = []
        c = code
        for _ in range(n - 2):
            seq.append(c % n)
            c //= n
        t = tree_from_pruefer(n, seq)
        key = _canonical_form(t)
        if key not in reps:
            reps[key] = t
    return [reps[k] for k in sorted(reps)]


def _canonical_form(tree: Tree) -> str:
    """AHU canonical encoding of an unrooted tree (rooted at its centroid)."""
    adj = tree.adjacency()

    def encode(root: int, parent: int) -> str:
        subs = sorted(encode(w, root) for w in adj[root] if w != parent)
        return "(" + "".join(subs) + ")"

    # centroid(s): remove-leaves peeling
    deg = dict(enumerate(tree.degrees()))
    active = set(range(tree.n))
    layer = [v for v in active if deg[v] <= 1]
    while len(active) > 2:
        nxt = []
        for v in layer:
            active.discard(v)
            for w in adj[v]:
                if w in active:
                    deg[w] -= 1
                    if deg[w] == 1:
                        nxt.append(w)
        layer = nxt
    return min(encode(c, -1) for c in active)


@dataclass(frozen=True, eq=False)
class TreeModel:
    """Tree plus a rooted factorization of its joint distribution.

    ``edge_conditionals[(p, c)][i, j] = P(X_c = s_i | X_p = s_j)`` for every
    edge directed away from the root; matrices are column-stochastic and
    nonsingular so that all pairwise information distances are finite.
    """

    tree: Tree
    k: int
    root: int
    root_marginal: np.ndarray
    edge_conditionals: dict[tuple[int, int], np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.k < 2:
            raise ModelError(f"support size must be >= 2, got {self.k}")
        rm = np.asarray(self.root_marginal, dtype=np.float64)
        if rm.shape != (self.k,):
            raise ModelError("root marginal has wrong shape")
        if np.any(rm < 0) or abs(rm.sum() - 1.0) > STOCHASTIC_TOL:
            raise ModelError("root marginal is not a distribution")
        rm = rm.copy()
        rm.setflags(write=False)
        object.__setattr__(self, "root_marginal", rm)
        directed = dict(self._directed_edges())
        conds = {}
        for key, mat in self.edge_conditionals.items():
            p, c = key
            if directed.get(c) != p:
                raise ModelError(f"conditional key {key} is not a root-directed edge")
            m = np.asarray(mat, dtype=np.float64)
            if m.shape != (self.k, self.k):
                raise ModelError(f"conditional {key} has wrong shape")
            if np.any(m < 0):
                raise ModelError(f"conditional {key} has negative entries")
            if np.max(np.abs(m.sum(axis=0) - 1.0)) > STOCHASTIC_TOL:
                raise ModelError(f"conditional {key} is not column-stochastic")
            if abs(np.linalg.det(m)) <= DET_TOL:
                raise ModelError(f"conditional {key} is singular")
            m = m.copy()
            m.setflags(write=False)
            conds[key] = m
        if len(conds) != self.tree.n - 1:
            raise ModelError("one conditional per edge is required")
        object.__setattr__(self, "edge_conditionals", conds)

    def _directed_edges(self) -> list[tuple[int, int]]:
        """(child, parent) pairs for edges directed away from the root."""
        adj = self.tree.adjacency()
        out = []
        seen = {self.root}
        stack = [self.root]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    out.append((w, u))
                    stack.append(w)
        return out

    @property
    def n(self) -> int:
        return self.tree.n

    def parent_map(self) -> dict[int, int]:
        return dict(self._directed_edges())

    def conditional(self, parent: int, child: int) -> np.ndarray:
        return self.edge_conditionals[(parent, child)]


@dataclass(frozen=True)
class NoiseSpec:
    """Per-node error probabilities of the k-ary symmetric channel."""

    q: tuple[float, ...]
    q_max: float

    def __init__(self, q: Sequence[float], q_max: float):
        q = tuple(float(x) for x in q)
        if not 0.0 <= q_max < 1.0:
            raise ModelError(f"q_max must lie in [0, 1), got {q_max}")
        for i, qi in enumerate(q):
            if not 0.0 <= qi <= q_max:
                raise ModelError(f"q[{i}]={qi} outside [0, q_max={q_max}]")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "q_max", q_max)

    @staticmethod
    def zero(n: int) -> "NoiseSpec":
        return NoiseSpec((0.0,) * n, 0.0)


@dataclass(frozen=True)
class AlgoParams:
    """Inputs the recovery algorithm assumes about the ground truth.

    ``t_0`` is the residual floor separating "the center test has no root"
    from finite-sample noise; leave it ``None`` when unknown and the
    leaf-cluster resolution falls back to the minimum-residual rule.
    ``neighborhood_scale`` multiplies the neighborhood threshold
    ``4*d_max + 3*eta_max`` (1.0 keeps the population threshold; 0.5 gives
    the shrunken finite-sample variant).
    """

    d_min: float
    d_max: float
    q_max: float
    p_min: float
    t_0: float | None = None
    root_tol: float = 1e-8
    seed: int = 0
    neighborhood_scale: float = 1.0
    randomized_init: bool = False

    def __post_init__(self):
        if not 0.0 < self.d_min < self.d_max:
            raise ModelError("need 0 < d_min < d_max")
        if not 0.0 <= self.q_max < 1.0:
            raise ModelError("need 0 <= q_max < 1")
        if not 0.0 < self.p_min <= 1.0:
            raise ModelError("need 0 < p_min <= 1")
        if self.t_0 is not None and self.t_0 <= 0.0:
            raise ModelError("t_0 must be positive when present")

    @property
    def kappa_max(self) -> float:
        return math.exp(-self.d_min)


def _per_edge(values, edges, name: str) -> dict[tuple[int, int], float]:
    if isinstance(values, Mapping):
        out = {}
        for a, b in edges:
            key = (a, b) if (a, b) in values else (b, a)
            if key not in values:
                raise ModelError(f"missing {name} for edge ({a},{b})")
            out[(a, b)] = float(values[key])
        return out
    if np.isscalar(values):
        return {e: float(values) for e in edges}
    values = list(values)
    if len(values) != len(edges):
        raise ModelError(f"{name}: expected one value per edge")
    return {e: float(v) for e, v in zip(edges, values)}


def symmetric_conditional(k: int, alpha: float) -> np.ndarray:
    return alpha * np.eye(k) + (1.0 - alpha) * np.ones((k, k)) / k


def perturbed_conditional(k: int, alpha: float, delta: float, offset: int) -> np.ndarray:
    """(alpha-delta)*I + (1-alpha)*O/k + Delta with Delta the cyclic shift.

    The shift places delta at 1-indexed positions (i, ((i-1+offset) mod k)+1),
    equivalently 0-indexed columns (row + offset) mod k.
    """
    if not 0 < offset < k:
        raise ModelError(f"offset must satisfy 0 < c < k, got {offset}")
    mat = (alpha - delta) * np.eye(k) + (1.0 - alpha) * np.ones((k, k)) / k
    rows = np.arange(k)
    mat[rows, (rows + offset) % k] += delta
    return mat


def build_symmetric_model(
    tree: Tree,
    k: int,
    alphas,
    d_min: float | None = None,
    d_max: float | None = None,
) -> TreeModel:
    """Symmetric model: uniform marginals, edge conditionals alpha*I + (1-alpha)*O/k.

    When distance bounds are supplied, each alpha is checked against
    ``exp(-d_max/(k-1)) < alpha < exp(-d_min/(k-1))``.
    """
    if k < 2:
        raise ModelError(f"support size must be >= 2, got {k}")
    per_edge = _per_edge(alphas, tree.edges, "alpha")
    conds = {}
    for (a, b), alpha in per_edge.items():
        if not 0.0 < alpha < 1.0:
            raise ModelError(f"alpha must lie in (0, 1), got {alpha}")
        if d_max is not None and alpha <= math.exp(-d_max / (k - 1)):
            raise ModelError(f"alpha={alpha} puts the edge distance above d_max")
        if d_min is not None and alpha >= math.exp(-d_min / (k - 1)):
            raise ModelError(f"alpha={alpha} puts the edge distance below d_min")
        conds[(a, b)] = symmetric_conditional(k, alpha)
    return _rooted_model(tree, k, conds)


def build_perturbed_symmetric_model(
    tree: Tree,
    k: int,
    alphas,
    deltas,
    offsets=1,
) -> TreeModel:
    """Perturbed symmetric model: symmetric matrix plus a cyclic-shift delta."""
    if k < 2:
        raise ModelError(f"support size must be >= 2, got {k}")
    al = _per_edge(alphas, tree.edges, "alpha")
    de = _per_edge(deltas, tree.edges, "delta")
    of = _per_edge(offsets, tree.edges, "offset")
    conds = {}
    for e in tree.edges:
        alpha, delta, c = al[e], de[e], int(of[e])
        if not 0.0 < alpha < 1.0:
            raise ModelError(f"alpha must lie in (0, 1), got {alpha}")
        if delta != 0.0 and alpha == delta:
            raise ModelError("alpha == delta makes the conditional rank deficient")
        mat = perturbed_conditional(k, alpha, delta, c)
        if np.any(mat < 0.0) or np.any(mat > 1.0):
            raise ModelError(
                f"(alpha={alpha}, delta={delta}) produces entries outside [0, 1]"
            )
        conds[e] = mat
    return _rooted_model(tree, k, conds)


def _rooted_model(tree: Tree, k: int, conds_by_edge) -> TreeModel:
    """Root at node 0 and key conditionals as (parent, child).

    Both families are closed under edge reversal (with uniform marginals the
    reverse conditional is the transpose, which is the same family with the
    cyclic offset k-c), so the family matrix is used directly as
    P(child|parent) for whichever direction the rooting induces.
    """
    parent = {}
    adj = tree.adjacency()
    seen = {0}
    stack = [0]
    order = []
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                parent[w] = u
                order.append(w)
                stack.append(w)
    conds = {}
    for c in order:
        p = parent[c]
        e = (min(p, c), max(p, c))
        conds[(p, c)] = conds_by_edge[e]
    marginal = np.full(k, 1.0 / k)
    return TreeModel(tree=tree, k=k, root=0, root_marginal=marginal, edge_conditionals=conds)


def validate_assumptions(model: TreeModel, noise: NoiseSpec, params: AlgoParams) -> list[str]:
    """Report every violated assumption; empty list means all hold.

    Checks marginal mass >= p_min at every node and symbol, adjacent-edge
    information distances strictly inside (d_min, d_max), and q_i <= q_max.
    """
    from .oracle import exact_marginal

    report = []
    for v in range(model.n):
        marg = exact_marginal(model, v)
        low = float(marg.min())
        if low < params.p_min - 1e-12:  # equality at the boundary is accepted
            report.append(
                f"assumption_1: node {v} has marginal mass {low:.6g} < p_min={params.p_min}"
            )
    for (p, c), mat in model.edge_conditionals.items():
        marg_p = exact_marginal(model, p)
        joint = mat @ np.diag(marg_p)  # rows: child states, cols: parent states
        d = info_distance(joint, joint.sum(axis=1), joint.sum(axis=0))
        if not params.d_min < d < params.d_max:
            report.append(
                f"assumption_2: edge ({p},{c}) has distance {d:.6g} outside "
                f"({params.d_min}, {params.d_max})"
            )
    if len(noise.q) != model.n:
        report.append("assumption_3: noise vector length does not match node count")
    for i, qi in enumerate(noise.q):
        if qi > params.q_max:
            report.append(f"assumption_3: q[{i}]={qi} exceeds q_max={params.q_max}")
    return report


def save_model(model: TreeModel, path: str | Path) -> None:
    doc = {
        "k": model.k,
        "root": model.root,
        "root_marginal": [float(x) for x in model.root_marginal],
        "edges": [[a, b] for a, b in model.tree.edges],
        "conditionals": {
            f"{p}-{c}": [float(x) for x in mat.reshape(-1)]
            for (p, c), mat in sorted(model.edge_conditionals.items())
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_model(path: str | Path) -> TreeModel:
    doc = json.loads(Path(path).read_text())
    k = int(doc["k"])
    edges = [tuple(e) for e in doc["edges"]]
    tree = Tree(len(edges) + 1, edges)
    conds = {}
    for key, flat in doc["conditionals"].items():
        p, c = (int(x) for x in key.split("-"))
        conds[(p, c)] = np.array(flat, dtype=np.float64).reshape(k, k)
    return TreeModel(
        tree=tree,
        k=k,
        root=int(doc["root"]),
        root_marginal=np.array(doc["root_marginal"], dtype=np.float64),
        edge_conditionals=conds,
    )
