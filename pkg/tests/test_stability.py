import math

import numpy as np
import pytest

from fgrnn.cells import fgrnn_step
from fgrnn.errors import ContractViolation
from fgrnn.graph import Graph, build_knn_graph, build_laplacians
from fgrnn.sparse import dense_eig_sym
from fgrnn.stability import (condition_bound, jacobian_product,
                             scalar_cell_params, stability_sweep, sweep_csv,
                             step_jacobian, _forward_activation_derivs)


def ring_graph(n):
    edges = sorted({tuple(sorted((i, (i + 1) % n))) for i in range(n)})
    return Graph(n, tuple((i, j, 1.0) for i, j in edges))


def random_lap(seed, n=12):
    rng = np.random.default_rng(seed)
    return build_laplacians(build_knn_graph(rng.standard_normal((n, 3)), 3))


class TestStepJacobian:
    def test_relu_active(self):
        lap = random_lap(0)
        p = scalar_cell_params(u=0.8, n_nodes=12, b=5.0, activation="relu")
        h = np.abs(np.random.default_rng(0).standard_normal((12, 1))) * 0.1
        x = np.abs(np.random.default_rng(1).standard_normal((12, 1))) * 0.1
        jac = step_jacobian(p, lap, h, x)
        expected = 1.0 * 0.8 * lap.first_order.to_dense()
        assert np.allclose(jac, expected)

    def test_alpha_zero(self):
        lap = random_lap(1)
        p = scalar_cell_params(u=1.0, n_nodes=12, alpha=0.0, beta=0.4)
        jac = step_jacobian(p, lap, np.ones((12, 1)), np.ones((12, 1)))
        assert np.allclose(jac, 0.4 * np.eye(12))

    def test_tanh_at_zero(self):
        lap = random_lap(2)
        p = scalar_cell_params(u=0.5, n_nodes=12, activation="tanh",
                               alpha=0.9, beta=0.1)
        jac = step_jacobian(p, lap, np.zeros((12, 1)), np.zeros((12, 1)))
        expected = 0.9 * 0.5 * lap.first_order.to_dense() + 0.1 * np.eye(12)
        assert np.allclose(jac, expected)

    def test_family_guard(self):
        from fgrnn.training import TrainConfig, init_params
        lap = random_lap(3)
        p = init_params(TrainConfig(family="chebyshev"), 12, 1)
        with pytest.raises(ContractViolation):
            step_jacobian(p, lap, np.zeros((12, 1)), np.zeros((12, 1)))

    @pytest.mark.parametrize("activation", ["tanh", "sigmoid"])
    def test_matches_numerical_jacobian(self, activation):
        lap = random_lap(4, n=8)
        p = scalar_cell_params(u=0.7, n_nodes=8, w=0.3, b=0.1,
                               activation=activation, alpha=0.6, beta=0.4)
        rng = np.random.default_rng(5)
        h = rng.standard_normal((8, 1)) * 0.3
        x = rng.standard_normal((8, 1)) * 0.3
        jac = step_jacobian(p, lap, h, x)
        eps = 1e-6
        for j in range(8):
            hp, hm = h.copy(), h.copy()
            hp[j, 0] += eps
            hm[j, 0] -= eps
            _, plus = fgrnn_step(p, lap, hp, x)
            _, minus = fgrnn_step(p, lap, hm, x)
            fd = (plus - minus)[:, 0] / (2 * eps)
            denom = np.maximum(np.abs(jac[:, j]), 1e-8)
            assert np.max(np.abs(jac[:, j] - fd) / denom) < 1e-6


class TestJacobianProduct:
    def test_identity_product(self):
        lap = random_lap(6)
        p = scalar_cell_params(u=1.0, n_nodes=12, alpha=0.0, beta=1.0)
        frames = np.random.default_rng(6).standard_normal((8, 12, 1))
        rep = jacobian_product(p, lap, frames, 8)
        assert rep.condition_number == 1.0
        assert rep.sigma_max == pytest.approx(1.0)

    def test_relu_active_matrix_power(self):
        # alpha=1, beta=0, u=1: product is the (T-2)th power of the
        # single-hop operator; sigma_max = lambda_max^(T-2)
        n = 12
        g = ring_graph(n)
        lap = build_laplacians(g)
        p = scalar_cell_params(u=1.0, n_nodes=n, b=10.0, activation="relu")
        frames = np.abs(np.random.default_rng(7).standard_normal((12, n, 1))) * 0.01
        t_steps = 12
        rep = jacobian_product(p, lap, frames, t_steps)
        # connected 2-regular ring: lambda_max(L1) = 2
        assert rep.sigma_max == pytest.approx(2.0 ** (t_steps - 2), rel=1e-6)

    def test_zero_recurrent_weight(self):
        lap = random_lap(8)
        p = scalar_cell_params(u=0.0, n_nodes=12, b=5.0, activation="relu")
        frames = np.random.default_rng(8).standard_normal((6, 12, 1))
        rep = jacobian_product(p, lap, frames, 6)
        assert rep.sigma_max == 0.0
        assert math.isinf(rep.condition_number)

    def test_bound_dominates_condition_number(self):
        lap = random_lap(9, n=10)
        rng = np.random.default_rng(9)
        frames = rng.standard_normal((10, 10, 1)) * 0.5
        for alpha in (0.01, 0.05):
            p = scalar_cell_params(u=0.5, n_nodes=10, activation="tanh",
                                   alpha=alpha, beta=1.0)
            rep = jacobian_product(p, lap, frames, 8)
            if rep.bound is not None:
                assert rep.condition_number <= rep.bound * (1 + 1e-9)


class TestConditionBound:
    def test_alpha_zero(self):
        lap = random_lap(10)
        p = scalar_cell_params(u=1.0, n_nodes=12, alpha=0.0, beta=1.0)
        d_list = _forward_activation_derivs(
            p, lap, np.zeros((4, 12, 1)), 4)
        assert condition_bound(p, d_list, lap, 4) == 1.0

    def test_half_ratio_arithmetic(self):
        # engineered r = 0.5 at T = 4 gives ((1.5)/(0.5))^2 = 9
        lap = build_laplacians(Graph(2, ((0, 1, 1.0),)))
        p = scalar_cell_params(u=1.0, n_nodes=2, b=5.0, activation="relu",
                               alpha=0.5, beta=1.0)
        # relu-active: D = I, ||u L1||_F^2 = 4 for the K2 first-order
        # operator (all-ones 2x2), so r = 0.5 * 4 / 1 = 2 -> vacuous;
        # scale u so that r = 0.5: u^2 * 4 * 0.5 = 0.5 -> u = 0.5
        p = scalar_cell_params(u=0.5, n_nodes=2, b=5.0, activation="relu",
                               alpha=0.5, beta=1.0)
        d_list = [np.ones(2)] * 4
        assert condition_bound(p, d_list, lap, 4) == pytest.approx(9.0)

    def test_vacuous_when_r_large(self):
        lap = build_laplacians(Graph(2, ((0, 1, 1.0),)))
        p = scalar_cell_params(u=2.0, n_nodes=2, b=5.0, activation="relu",
                               alpha=1.0, beta=1.0)
        assert condition_bound(p, [np.ones(2)], lap, 4) is None

    def test_beta_zero_undefined(self):
        lap = random_lap(11)
        p = scalar_cell_params(u=1.0, n_nodes=12, alpha=1.0, beta=0.0)
        assert condition_bound(p, [np.ones(12)], lap, 4) is None


class TestSweep:
    def test_single_point(self):
        g = ring_graph(8)
        base = scalar_cell_params(u=1.0, n_nodes=8)
        rows = stability_sweep(g, base, [0.0], [1.0], [4], seed=0)
        assert len(rows) == 1
        assert rows[0].condition_number == 1.0

    def test_sigma_growth_in_t(self):
        g = ring_graph(10)
        base = scalar_cell_params(u=1.0, n_nodes=10, b=10.0, activation="relu")
        rows = stability_sweep(g, base, [1.0], [0.0], [4, 8, 12], seed=1)
        sigmas = [r.sigma_max for r in rows]
        assert sigmas[0] < sigmas[1] < sigmas[2]

    def test_lexicographic_order_and_csv(self):
        g = ring_graph(8)
        base = scalar_cell_params(u=0.3, n_nodes=8)
        rows = stability_sweep(g, base, [1.0, 0.0], [0.5], [6, 4], seed=2)
        keys = [(r.alpha, r.beta, r.horizon) for r in rows]
        assert keys == sorted(keys)
        csv = sweep_csv(rows)
        lines = csv.strip().splitlines()
        assert lines[0] == "alpha,beta,T,sigma_max,sigma_min,cond,bound_M"
        assert len(lines) == 5
