import math

import numpy as np
import pytest

from helpers import random_general_model, random_noise, random_perturbed, random_symmetric
from noisytree.model import NoiseSpec, build_perturbed_symmetric_model, build_symmetric_model, chain_tree, star_tree
from noisytree.oracle import exact_pairwise_set
from noisytree.quadtest import (
    MatrixQuadratic,
    SingularTripletError,
    _entry_root,
    binary_quadratic_check,
    mean_root,
    min_residual,
    per_entry_roots,
    quad_coefficients,
    quadratic_error,
)


def perturbed_gap_lower_bound(k: int, alpha: float, delta: float, q_center: float) -> float:
    """Residual floor for a perturbed leaf-center test (offset != k/2).

    Minimizing the per-entry expansion Q^2(g) = ((k-1)g + 2ke)^2/k^3
    + 2(g + ke)^2/k^3 + (k-3) g^2/k^3 over g gives 2(k-3) e^2 / (k(k-1)).
    """
    ap = (1 - q_center) * alpha
    dp = (1 - q_center) * delta
    e = dp * (ap - dp)
    return abs(e) * math.sqrt(2.0 * (k - 3) / (k * (k - 1)))


class TestCoefficients:
    def test_quadratic_coefficient_matrix_k3(self):
        m = build_symmetric_model(chain_tree(3), 3, 0.7)
        mq = quad_coefficients(exact_pairwise_set(m), (0, 1, 2))
        np.testing.assert_allclose(np.diag(mq.quad), -2.0 / 9.0, atol=1e-15)
        off = mq.quad[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off, 1.0 / 9.0, atol=1e-15)

    def test_coefficients_have_zero_row_and_column_sums(self):
        rng = np.random.default_rng(30)
        for _ in range(10):
            k = int(rng.integers(2, 6))
            m = random_general_model(rng, 4, k)
            pmfs = exact_pairwise_set(m, random_noise(rng, 4, 0.3))
            mq = quad_coefficients(pmfs, (0, 2, 3))
            for mat in (mq.quad, mq.lin, mq.const):
                np.testing.assert_allclose(mat.sum(axis=0), 0.0, atol=1e-10)
                np.testing.assert_allclose(mat.sum(axis=1), 0.0, atol=1e-10)

    def test_singular_cross_matrix_raises(self):
        k = 2
        uniform = np.full((k, k), 0.25)
        edge = np.array([[0.4, 0.1], [0.1, 0.4]])
        pmfs_pairs = {(0, 1): edge, (0, 2): uniform, (1, 2): edge}
        from noisytree.oracle import PairwisePmfSet

        pmfs = PairwisePmfSet(n=3, k=2, pairs=pmfs_pairs)
        with pytest.raises(SingularTripletError) as err:
            quad_coefficients(pmfs, (0, 1, 2))
        assert err.value.pair == (0, 2)

    def test_third_node_invariance_for_leaf_center(self):
        # the constant coefficient with a leaf as center does not depend on
        # which third node is used
        rng = np.random.default_rng(31)
        for _ in range(6):
            k = int(rng.integers(2, 5))
            m = random_general_model(rng, 6, k, tree=chain_tree(6))
            noise = random_noise(rng, 6, 0.3)
            pmfs = exact_pairwise_set(m, noise)
            # leaf 0 with parent 1; third node varies
            ref = quad_coefficients(pmfs, (1, 0, 2))
            for third in (3, 4, 5):
                other = quad_coefficients(pmfs, (1, 0, third))
                np.testing.assert_allclose(other.const, ref.const, atol=1e-10)

    def test_star_hub_substitution_identity(self):
        # for a Y-shaped triplet around a hub, the quadratic equals the one
        # built with the hub substituted for the first outer node
        rng = np.random.default_rng(32)
        for _ in range(6):
            k = int(rng.integers(2, 5))
            m = random_general_model(rng, 4, k, tree=star_tree(4, hub=3))
            noise = random_noise(rng, 4, 0.3)
            pmfs = exact_pairwise_set(m, noise)
            direct = quad_coefficients(pmfs, (0, 1, 2))
            via_hub = quad_coefficients(pmfs, (3, 1, 2))
            np.testing.assert_allclose(direct.const, via_hub.const, atol=1e-10)
            np.testing.assert_allclose(direct.lin, via_hub.lin, atol=1e-10)


class TestRootSelection:
    def test_in_range_root_preferred(self):
        # roots {0.2, 1.8}: (x-0.2)(x-1.8) = x^2 - 2x + 0.36
        assert _entry_root(1.0, -2.0, 0.36, q_max=0.4) == pytest.approx(0.2)

    def test_both_inside_takes_smaller(self):
        # roots {0.1, 0.3}
        assert _entry_root(1.0, -0.4, 0.03, q_max=0.4) == pytest.approx(0.1)

    def test_none_inside_takes_nearest(self):
        # roots {-0.5, 0.6}, q_max = 0.4: 0.6 is nearer to the interval
        assert _entry_root(1.0, -0.1, -0.3, q_max=0.4) == pytest.approx(0.6)

    def test_negative_discriminant_clamped_vertex(self):
        # x^2 + 1: vertex at 0
        assert _entry_root(1.0, 0.0, 1.0, q_max=0.4) == 0.0
        # vertex at 0.9 clamps to q_max
        assert _entry_root(1.0, -1.8, 1.0, q_max=0.4) == 0.4

    def test_linear_entry(self):
        assert _entry_root(0.0, 2.0, -0.5, q_max=1.0) == pytest.approx(0.25)

    def test_fully_degenerate_entry_is_dropped(self):
        assert _entry_root(0.0, 0.0, 0.3, q_max=1.0) is None
        mq = MatrixQuadratic(
            quad=np.array([[1.0, 0.0], [0.0, 1.0]]),
            lin=np.array([[-0.4, 0.0], [0.0, -0.4]]),
            const=np.array([[0.04, 0.9], [0.9, 0.04]]),
        )
        roots = per_entry_roots(mq, q_max=1.0)
        assert np.isnan(roots[0, 1]) and np.isnan(roots[1, 0])
        assert mean_root(mq, 1.0) == pytest.approx(0.2)


class TestPopulationRoots:
    def test_symmetric_leaf_center_closed_form(self):
        rng = np.random.default_rng(33)
        for _ in range(20):
            k = int(rng.integers(2, 6))
            model, info = random_symmetric(rng, int(rng.integers(3, 7)), k)
            tree = model.tree
            leaves = tree.leaves()
            leaf = leaves[int(rng.integers(0, len(leaves)))]
            parent = tree.adjacency()[leaf][0]
            third = next(v for v in range(tree.n) if v not in (leaf, parent))
            noise = random_noise(rng, tree.n, 0.4)
            pmfs = exact_pairwise_set(model, noise)
            result = quadratic_error(pmfs, (parent, leaf, third), center=leaf, q_max=1.0)
            e = (min(leaf, parent), max(leaf, parent))
            expected = 1.0 - (1.0 - noise.q[leaf]) * info["alphas"][e]
            assert result.mean_root == pytest.approx(expected, abs=1e-9)
            assert result.residual < 1e-9

    def test_true_middle_node_recovers_its_noise(self):
        rng = np.random.default_rng(34)
        for _ in range(200):
            k = int(rng.integers(2, 6))
            m = random_general_model(rng, 3, k, tree=chain_tree(3))
            noise = random_noise(rng, 3, 0.4)
            pmfs = exact_pairwise_set(m, noise)
            result = quadratic_error(pmfs, (0, 1, 2), center=1, q_max=1.0)
            assert result.mean_root == pytest.approx(noise.q[1], abs=1e-8)
            assert result.residual < 1e-8

    def test_residual_matches_norm_at_mean_root(self):
        rng = np.random.default_rng(35)
        m = random_general_model(rng, 4, 3)
        pmfs = exact_pairwise_set(m, random_noise(rng, 4, 0.3))
        result = quadratic_error(pmfs, (0, 1, 3), center=1, q_max=0.4)
        mq = quad_coefficients(pmfs, (0, 1, 3))
        np.testing.assert_allclose(
            result.residual, mq.residual_at(result.mean_root), atol=1e-12
        )

    def test_binary_entry_quadratics_all_identical(self):
        # zero row/col sums force |entries| equal for k = 2, so the residual
        # at the common root vanishes
        rng = np.random.default_rng(36)
        for _ in range(30):
            m = random_general_model(rng, int(rng.integers(3, 7)), 2)
            noise = random_noise(rng, m.n, 0.5)
            pmfs = exact_pairwise_set(m, noise)
            nodes = rng.choice(m.n, size=3, replace=False)
            triplet = tuple(int(v) for v in nodes)
            result = quadratic_error(pmfs, triplet, center=triplet[1], q_max=1.0)
            assert result.residual < 1e-9
            assert 0.0 <= result.mean_root <= 1.0
            assert result.feasible


class TestPerturbedGap:
    def test_k3_closed_form_root(self):
        rng = np.random.default_rng(37)
        for _ in range(15):
            model, info = random_perturbed(rng, 3, 3)
            tree = model.tree
            leaf = tree.leaves()[0]
            parent = tree.adjacency()[leaf][0]
            third = next(v for v in range(3) if v not in (leaf, parent))
            noise = random_noise(rng, 3, 0.3)
            pmfs = exact_pairwise_set(model, noise)
            e = (min(leaf, parent), max(leaf, parent))
            ap = (1 - noise.q[leaf]) * info["alphas"][e]
            dp = (1 - noise.q[leaf]) * info["deltas"][e]
            x = 1.0 - math.sqrt(ap * ap - 3.0 * dp * (ap - dp))
            mq = quad_coefficients(pmfs, (parent, leaf, third))
            assert mq.residual_at(x) < 1e-9

    def test_k4_and_up_residual_gap(self):
        rng = np.random.default_rng(38)
        for _ in range(200):
            k = int(rng.integers(4, 7))
            model, info = random_perturbed(rng, 3, k)
            tree = model.tree
            leaf = tree.leaves()[0]
            parent = tree.adjacency()[leaf][0]
            third = next(v for v in range(3) if v not in (leaf, parent))
            noise = random_noise(rng, 3, 0.3)
            pmfs = exact_pairwise_set(model, noise)
            mq = quad_coefficients(pmfs, (parent, leaf, third))
            _, best = min_residual(mq, 1.0)
            e = (min(leaf, parent), max(leaf, parent))
            bound = perturbed_gap_lower_bound(
                k, info["alphas"][e], info["deltas"][e], noise.q[leaf]
            )
            assert best >= bound - 1e-9

    def test_min_residual_finds_symmetric_zero(self):
        m = build_symmetric_model(chain_tree(3), 4, 0.8)
        noise = NoiseSpec((0.05, 0.0, 0.1), 0.2)
        pmfs = exact_pairwise_set(m, noise)
        mq = quad_coefficients(pmfs, (1, 2, 0))
        x, best = min_residual(mq, 1.0)
        assert best < 1e-10
        assert x == pytest.approx(1.0 - (1.0 - 0.1) * 0.8, abs=1e-5)


class TestFeasibility:
    def test_out_of_range_root_infeasible(self):
        # leaf-center symmetric root 1 - (1-q) alpha above q_max
        m = build_symmetric_model(chain_tree(3), 3, 0.7)
        pmfs = exact_pairwise_set(m, NoiseSpec.zero(3))
        result = quadratic_error(pmfs, (1, 2, 0), center=2, q_max=0.2)
        assert not result.feasible  # root 0.3 > q_max

    def test_t0_policy(self):
        m = build_symmetric_model(chain_tree(3), 3, 0.7)
        pmfs = exact_pairwise_set(m, NoiseSpec((0.05, 0.1, 0.15), 0.3))
        good = quadratic_error(pmfs, (0, 1, 2), center=1, q_max=0.3, t_0=1e-6)
        assert good.feasible
        per = build_perturbed_symmetric_model(chain_tree(3), 4, 0.7, 0.05)
        pmfs_bad = exact_pairwise_set(per, NoiseSpec((0.05, 0.1, 0.15), 0.3))
        bad = quadratic_error(pmfs_bad, (1, 2, 0), center=2, q_max=0.3, t_0=1e-6)
        assert not bad.feasible


class TestBinaryQuadratic:
    def bisection_root(self, s: float) -> float:
        # independent scalar oracle for x^2/4 - x/2 + s on [0, 1]
        def f(x: float) -> float:
            return x * x / 4.0 - x / 2.0 + s

        lo, hi = 0.0, 1.0
        for _ in range(200):
            mid = (lo + hi) / 2.0
            if f(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        return (lo + hi) / 2.0

    def test_spec_example_cross_checked_by_bisection(self):
        P = np.array([[0.4, 0.1], [0.1, 0.4]])
        s = 0.08 + 0.08
        root = binary_quadratic_check(P)
        assert root == pytest.approx(0.4, abs=1e-12)
        assert root == pytest.approx(self.bisection_root(s), abs=1e-9)

    def test_boundary_roots(self):
        near_uniform = np.array([[0.25, 0.2501], [0.2501, 0.25]]) / 1.0004
        assert binary_quadratic_check(near_uniform) == pytest.approx(1.0, abs=0.05)
        zeros = np.array([[0.5, 0.0], [0.0, 0.5]])
        assert binary_quadratic_check(zeros) == pytest.approx(0.0, abs=1e-12)

    def test_rank_deficient_raises(self):
        with pytest.raises(ValueError):
            binary_quadratic_check(np.full((2, 2), 0.25))

    def test_matches_mean_root_for_noiseless_wrong_center(self):
        # for k=2 the scalar closed form and the matrix machinery agree
        rng = np.random.default_rng(39)
        for _ in range(10):
            m = random_general_model(rng, 3, 2, tree=chain_tree(3))
            pmfs = exact_pairwise_set(m, NoiseSpec.zero(3))
            result = quadratic_error(pmfs, (1, 0, 2), center=0, q_max=1.0)
            scalar = binary_quadratic_check(pmfs.joint(0, 1))
            assert result.mean_root == pytest.approx(scalar, abs=1e-9)
