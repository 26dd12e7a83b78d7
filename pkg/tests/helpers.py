"""Shared generators for randomized tests: valid models with healthy margins."""

from __future__ import annotations

import math

import numpy as np

from noisytree.model import (
    NoiseSpec,
    Tree,
    TreeModel,
    build_perturbed_symmetric_model,
    build_symmetric_model,
    random_tree,
)


def random_symmetric(
    rng: np.random.Generator,
    n: int,
    k: int,
    d_min: float = 0.2,
    d_max: float = 1.2,
) -> tuple[TreeModel, dict]:
    """Symmetric model with per-edge alphas strictly inside the distance bounds."""
    tree = random_tree(n, rng)
    lo = math.exp(-d_max / (k - 1))
    hi = math.exp(-d_min / (k - 1))
    alphas = {e: float(rng.uniform(lo + 0.02 * (hi - lo), hi - 0.02 * (hi - lo))) for e in tree.edges}
    model = build_symmetric_model(tree, k, alphas)
    return model, {"alphas": alphas, "d_min": d_min, "d_max": d_max}


def random_perturbed(
    rng: np.random.Generator,
    n: int,
    k: int,
    alpha_range: tuple[float, float] = (0.55, 0.85),
    delta_range: tuple[float, float] = (0.02, 0.08),
    offset: int = 1,
) -> tuple[TreeModel, dict]:
    alphas = {}
    deltas = {}
    tree = random_tree(n, rng)
    for e in tree.edges:
        alphas[e] = float(rng.uniform(*alpha_range))
        deltas[e] = float(rng.uniform(*delta_range))
    model = build_perturbed_symmetric_model(tree, k, alphas, deltas, offset)
    return model, {"alphas": alphas, "deltas": deltas, "offset": offset}


def random_general_model(
    rng: np.random.Generator,
    n: int,
    k: int,
    p_floor: float = 0.12,
    tree: Tree | None = None,
) -> TreeModel:
    """Arbitrary nonsingular tree model with marginal mass bounded below.

    Conditionals are diagonally weighted mixes of random column distributions,
    which keeps determinants comfortably away from zero (rejection handles the
    rare unlucky draw); column entries stay above (1-w)*floor so propagated
    marginals never collapse.
    """
    if tree is None:
        tree = random_tree(n, rng)
    floor = min(p_floor, 0.5 / k)
    det_floor = 0.08 ** (k - 1)

    def bounded_dist() -> np.ndarray:
        raw = rng.dirichlet(np.ones(k))
        return floor + (1.0 - k * floor) * raw

    root_marginal = bounded_dist()
    conds = {}
    adj = tree.adjacency()
    stack = [0]
    seen = {0}
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w in seen:
                continue
            seen.add(w)
            while True:
                weight = rng.uniform(0.35, 0.75)
                base = np.column_stack([bounded_dist() for _ in range(k)])
                mat = weight * np.eye(k) + (1.0 - weight) * base
                if abs(np.linalg.det(mat)) > det_floor:
                    break
            conds[(u, w)] = mat
            stack.append(w)
    return TreeModel(tree=tree, k=k, root=0, root_marginal=root_marginal, edge_conditionals=conds)


def random_noise(rng: np.random.Generator, n: int, q_max: float) -> NoiseSpec:
    if q_max == 0.0:
        return NoiseSpec.zero(n)
    return NoiseSpec(tuple(rng.uniform(0.0, q_max, n)), q_max)


def edge_distances(model: TreeModel) -> dict[tuple[int, int], float]:
    """True information distance of every edge (for post-hoc bounds)."""
    from noisytree.metric import info_distance
    from noisytree.oracle import all_marginals

    margs = all_marginals(model)
    out = {}
    for (p, c), mat in model.edge_conditionals.items():
        joint = mat @ np.diag(margs[p])
        out[(p, c)] = info_distance(joint, joint.sum(axis=1), joint.sum(axis=0))
    return out


def tree_split_oracle(tree: Tree, quartet: tuple[int, int, int, int]):
    """Ground-truth star/non-star verdict by scanning all single-edge splits.

    Returns None for a star, else the 2+2 partition as a pair of frozensets.
    """
    nodes = set(quartet)
    adj = tree.adjacency()
    for cut in tree.edges:
        comp = set()
        stack = [cut[0]]
        comp.add(cut[0])
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in comp and {u, w} != set(cut):
                    comp.add(w)
                    stack.append(w)
        side = nodes & comp
        if len(side) == 2:
            return frozenset(side), frozenset(nodes - side)
    return None


def population_distance_table(tree: Tree, edge_d: dict, noise_d=None):
    """Distance table from per-edge lengths plus optional per-node noise offsets."""
    import math as _math

    from noisytree.metric import build_table

    n = tree.n
    d = np.zeros((n, n))
    step = {}
    for (a, b), val in edge_d.items():
        step[(a, b)] = step[(b, a)] = val
    for i in range(n):
        for j in range(i + 1, n):
            path = tree.path(i, j)
            total = sum(step[(u, v)] for u, v in zip(path, path[1:]))
            if noise_d is not None:
                total += noise_d[i] + noise_d[j]
            d[i, j] = d[j, i] = total
    assert _math.isfinite(d.max())
    return build_table(d)


def params_for(model: TreeModel, noise: NoiseSpec, t_0: float | None = None, margin: float = 0.05):
    """AlgoParams wrapping the realized model quantities with a small margin."""
    from noisytree.model import AlgoParams
    from noisytree.oracle import all_marginals

    dists = list(edge_distances(model).values())
    p_min = float(all_marginals(model).min())
    return AlgoParams(
        d_min=(1 - margin) * min(dists),
        d_max=(1 + margin) * max(dists),
        q_max=max(noise.q_max, 1e-9),
        p_min=min(p_min, 1.0 / model.k),
        t_0=t_0,
    )
