import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_general_model
from noisytree.evalkit import (
    chow_liu,
    enumerate_equivalence_class,
    in_t_sub,
    leaf_clusters,
    mutual_information,
    same_equivalence_class,
    score_trial,
)
from noisytree.model import Tree, build_symmetric_model, chain_tree, random_tree, star_tree, tree_from_pruefer
from noisytree.oracle import exact_pairwise_set


@st.composite
def trees(draw, max_n=8):
    n = draw(st.integers(min_value=2, max_value=max_n))
    if n == 2:
        return Tree(2, [(0, 1)])
    seq = draw(st.lists(st.integers(0, n - 1), min_size=n - 2, max_size=n - 2))
    return tree_from_pruefer(n, seq)


@st.composite
def tree_with_cluster_permutation(draw, max_n=8):
    """A tree plus a member of its equivalence class (hub re-choice per cluster)."""
    tree = draw(trees(max_n))
    lc = leaf_clusters(tree)
    mapping = {v: v for v in range(tree.n)}
    for cluster in lc.clusters:
        members = sorted(cluster)
        perm = draw(st.permutations(members))
        for src, dst in zip(members, perm):
            mapping[src] = dst
    edges = [(mapping[a], mapping[b]) for a, b in tree.edges]
    return tree, Tree(tree.n, edges)


class TestLeafClusters:
    def test_star_is_one_cluster(self):
        lc = leaf_clusters(star_tree(5))
        assert lc.clusters == (frozenset({0, 1, 2, 3, 4}),)
        assert lc.hubs[lc.clusters[0]] == 0
        assert lc.quotient_edges == frozenset()

    def test_four_chain(self):
        lc = leaf_clusters(chain_tree(4))
        assert set(lc.clusters) == {frozenset({0, 1}), frozenset({2, 3})}
        assert lc.hubs[frozenset({0, 1})] == 1
        assert lc.hubs[frozenset({2, 3})] == 2

    def test_two_node_tree(self):
        lc = leaf_clusters(chain_tree(2))
        assert lc.clusters == (frozenset({0, 1}),)

    def test_multi_cluster_topology(self):
        # two leaf groups hanging off a 3-node spine: 2-(0,1), 3-(nothing), 4-(5,6)
        tree = Tree(7, [(0, 2), (1, 2), (2, 3), (3, 4), (4, 5), (4, 6)])
        lc = leaf_clusters(tree)
        assert set(lc.clusters) == {frozenset({0, 1, 2}), frozenset({4, 5, 6})}
        assert lc.cluster_of(3) is None
        supers = {frozenset({0, 1, 2}), frozenset({3}), frozenset({4, 5, 6})}
        flat = {s for edge in lc.quotient_edges for s in edge}
        assert flat == supers

    def test_clusters_partition_leaves(self):
        rng = np.random.default_rng(40)
        for _ in range(20):
            tree = random_tree(int(rng.integers(2, 10)), rng)
            lc = leaf_clusters(tree)
            for a, b in combinations(lc.clusters, 2):
                assert not (a & b)
            leaves = set(tree.leaves())
            covered = set().union(*lc.clusters) if lc.clusters else set()
            assert leaves <= covered


class TestSameEquivalenceClass:
    def test_identity(self):
        t = chain_tree(5)
        assert same_equivalence_class(t, t)

    def test_within_cluster_swap(self):
        t1 = chain_tree(4)
        t2 = Tree(4, [(1, 0), (0, 2), (2, 3)])  # swap 0 and 1 in cluster {0,1}
        assert same_equivalence_class(t1, t2)

    def test_chain_vs_star_differs(self):
        assert not same_equivalence_class(chain_tree(4), star_tree(4, hub=1))

    @settings(max_examples=120, deadline=None)
    @given(tree_with_cluster_permutation())
    def test_cluster_permutations_stay_in_class(self, pair):
        t1, t2 = pair
        assert same_equivalence_class(t1, t2)
        assert same_equivalence_class(t2, t1)

    @settings(max_examples=120, deadline=None)
    @given(trees(), trees())
    def test_symmetry_and_reflexivity(self, t1, t2):
        assert same_equivalence_class(t1, t1)
        if t1.n == t2.n:
            assert same_equivalence_class(t1, t2) == same_equivalence_class(t2, t1)

    @settings(max_examples=60, deadline=None)
    @given(tree_with_cluster_permutation(max_n=7), tree_with_cluster_permutation(max_n=7))
    def test_transitivity_within_class(self, p1, p2):
        a, b = p1
        c, d = p2
        # b ~ a and (when the classes meet) a ~ c chains to b ~ d
        if same_equivalence_class(b, c):
            assert same_equivalence_class(a, d)

    def test_agrees_with_brute_force_enumeration(self):
        rng = np.random.default_rng(41)
        for _ in range(60):
            n = int(rng.integers(2, 8))
            t1 = random_tree(n, rng)
            t2 = random_tree(n, rng)
            expected = frozenset(t2.edges) in enumerate_equivalence_class(t1)
            assert same_equivalence_class(t1, t2) == expected


class TestInTSub:
    def test_identity_always_in(self):
        t = chain_tree(4)
        assert in_t_sub(t, set(), t)

    def test_flagged_leaf_swap_in(self):
        t1 = chain_tree(4)
        t2 = Tree(4, [(1, 0), (0, 2), (2, 3)])
        assert in_t_sub(t1, {0, 1}, t2)

    def test_unflagged_leaf_swap_out(self):
        t1 = chain_tree(4)
        t2 = Tree(4, [(1, 0), (0, 2), (2, 3)])
        assert not in_t_sub(t1, {1}, t2)  # hub position taken by unflagged 0

    def test_implication_chain(self):
        # exact => in_t_sub => eq_class on random pairs
        rng = np.random.default_rng(42)
        for _ in range(40):
            n = int(rng.integers(2, 8))
            t1 = random_tree(n, rng)
            t2 = random_tree(n, rng)
            flags = {int(v) for v in rng.choice(n, size=n // 2, replace=False)}
            exact = set(t1.edges) == set(t2.edges)
            sub = in_t_sub(t1, flags, t2)
            eq = same_equivalence_class(t1, t2)
            assert not exact or sub
            assert not sub or eq


class TestMutualInformation:
    def test_independent_joint_is_zero(self):
        p = np.array([0.3, 0.7])
        q = np.array([0.6, 0.4])
        assert mutual_information(np.outer(p, q)) == pytest.approx(0.0, abs=1e-15)

    def test_perfect_correlation(self):
        assert mutual_information(np.diag([0.5, 0.5])) == pytest.approx(math.log(2))

    def test_compensated_summation_oracle(self):
        # term-by-term fsum of the defining series
        m = build_symmetric_model(chain_tree(2), 2, 0.5)
        joint = exact_pairwise_set(m).pairs[(0, 1)]
        row = joint.sum(axis=1)
        col = joint.sum(axis=0)
        terms = [
            joint[i, j] * (math.log(joint[i, j]) - math.log(row[i] * col[j]))
            for i in range(2)
            for j in range(2)
            if joint[i, j] > 0
        ]
        assert mutual_information(joint) == pytest.approx(math.fsum(terms), abs=1e-15)

    def test_zero_cells_ignored(self):
        joint = np.array([[0.5, 0.0], [0.0, 0.5]])
        assert math.isfinite(mutual_information(joint))


class TestChowLiu:
    def test_recovers_noiseless_trees(self):
        rng = np.random.default_rng(43)
        for _ in range(15):
            n = int(rng.integers(2, 9))
            m = random_general_model(rng, n, 3)
            got = chow_liu(exact_pairwise_set(m))
            assert set(got.edges) == set(m.tree.edges)

    def test_two_nodes(self):
        m = random_general_model(np.random.default_rng(44), 2, 2)
        assert chow_liu(exact_pairwise_set(m)).edges == ((0, 1),)

    def test_invariant_to_uniform_weight_scaling(self):
        # scaling all joints' MI uniformly cannot change the argmax tree;
        # emulate by comparing against a manually scaled-weight Kruskal
        m = random_general_model(np.random.default_rng(45), 6, 3)
        pmfs = exact_pairwise_set(m)
        base = chow_liu(pmfs)
        weights = {
            (i, j): 3.7 * mutual_information(pmfs.joint(i, j))
            for i in range(6)
            for j in range(i + 1, 6)
        }
        order = sorted(weights, key=lambda e: (-weights[e], e))
        parent = list(range(6))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        edges = []
        for i, j in order:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj
                edges.append((i, j))
        assert set(base.edges) == set(edges)


class TestScoreTrial:
    def test_three_flags(self):
        truth = chain_tree(4)
        swapped = Tree(4, [(1, 0), (0, 2), (2, 3)])
        outputs = {"ours": truth, "swap": swapped, "star": star_tree(4, hub=1)}
        scores = score_trial(truth, {0, 1}, outputs)
        assert scores["ours"].exact and scores["ours"].eq_class and scores["ours"].in_t_sub
        assert not scores["swap"].exact and scores["swap"].eq_class and scores["swap"].in_t_sub
        assert not scores["star"].exact and not scores["star"].eq_class
