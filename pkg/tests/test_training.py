import numpy as np
import pytest

from fgrnn.cells import readout
from fgrnn.data import FrameSequence
from fgrnn.errors import ContractViolation
from fgrnn.gconv import ChebFilter, FeatureTransform
from fgrnn.graph import Graph, build_knn_graph, build_laplacians
from fgrnn.training import (AdamState, TrainConfig, adam_step, bptt,
                            count_params, finite_difference_check,
                            graph_regularized_loss, history_csv, init_params,
                            params_to_vector, parse_config, prediction_loss,
                            train, vector_to_params)


def knn_lap(seed, n=10, k=3):
    rng = np.random.default_rng(seed)
    return build_laplacians(build_knn_graph(rng.standard_normal((n, 3)), k))


def make_params(family, n, f=3, p=3, k=3, seed=0):
    return init_params(TrainConfig(family=family, k=k, p=p, seed=seed), n, f)


class TestLosses:
    def test_zero_when_equal(self):
        x = np.ones((3, 2))
        assert prediction_loss(x, x.copy()) == 0.0

    def test_all_ones_difference(self):
        assert prediction_loss(np.ones((2, 3)), np.zeros((2, 3))) == 6.0

    def test_matches_elementwise_sum(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((2, 5, 4))
        brute = sum((a[i, j] - b[i, j]) ** 2 for i in range(5) for j in range(4))
        assert prediction_loss(a, b) == pytest.approx(brute, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            prediction_loss(np.ones((2, 2)), np.ones((2, 3)))

    def test_regularizer_zero_lambda(self):
        rng = np.random.default_rng(1)
        lap = knn_lap(1)
        a, b = rng.standard_normal((2, 10, 3))
        assert graph_regularized_loss(a, b, lap, 0.0) == prediction_loss(a, b)

    def test_constant_signal_on_ring(self):
        # 2-regular ring: constants are in the Laplacian null space
        n = 6
        edges = tuple((i, (i + 1) % n, 1.0) if i < (i + 1) % n
                      else ((i + 1) % n, i, 1.0) for i in range(n))
        lap = build_laplacians(Graph(n, tuple(sorted(edges))))
        x_hat = np.full((n, 2), 3.7)
        x = np.zeros((n, 2))
        reg_part = graph_regularized_loss(x_hat, x, lap, 1.0) - prediction_loss(x_hat, x)
        assert abs(reg_part) < 1e-10

    def test_matches_dense_quadratic_form(self):
        rng = np.random.default_rng(2)
        lap = knn_lap(2)
        x_hat = rng.standard_normal((10, 3))
        x = rng.standard_normal((10, 3))
        dense = lap.laplacian.to_dense()
        expected = prediction_loss(x_hat, x) + 0.7 * np.trace(x_hat.T @ dense @ x_hat)
        assert graph_regularized_loss(x_hat, x, lap, 0.7) == pytest.approx(
            expected, abs=1e-10)


class TestBptt:
    def test_perfect_predictions_give_zero_gradients(self):
        lap = knn_lap(3)
        p = make_params("first_order", 10)
        rng = np.random.default_rng(3)
        window = rng.standard_normal((4, 10, 3))
        # engineer targets equal to the model's own forward outputs
        from fgrnn.cells import ACTIVATIONS, preactivation
        act = ACTIVATIONS[p.activation][0]
        h = np.zeros((10, 3))
        frames = [window[0]]
        for t in range(3):
            h = p.alpha * act(preactivation(p, lap, h, frames[t])) + p.beta * h
            frames.append(readout(p, lap, h))
        loss, grads = bptt(p, lap, np.stack(frames))
        assert loss == pytest.approx(0.0, abs=1e-20)
        assert np.all(grads.to_vector() == 0.0)

    def test_single_step_grad_z(self):
        lap = knn_lap(4)
        p = make_params("first_order", 10)
        p.input_filter.weights[:] = 0.0
        p.recurrent_filter.weights[:] = 0.0
        p.bias[:] = 0.0
        p.readout_bias[:] = 0.0
        rng = np.random.default_rng(4)
        window = rng.standard_normal((2, 10, 3))
        h = np.zeros((10, 3))  # stays zero through the step (tanh(0) = 0)
        x_hat = readout(p, lap, h)
        _, grads = bptt(p, lap, window)
        expected_z = (2.0 * (x_hat - window[1])).sum(axis=1)
        assert np.allclose(grads.grad_readout_bias, expected_z, atol=1e-12)

    @pytest.mark.parametrize("family,act,t_w", [
        ("chebyshev", "tanh", 5), ("first_order", "tanh", 3),
        ("chebyshev", "relu", 3), ("first_order", "sigmoid", 7),
    ])
    def test_finite_differences(self, family, act, t_w):
        lap = knn_lap(5, n=12)
        cfg = TrainConfig(family=family, k=3, p=3, activation=act, seed=7)
        p = init_params(cfg, 12, 3)
        rng = np.random.default_rng(6)
        window = 0.5 * rng.standard_normal((t_w + 1, 12, 3))
        assert finite_difference_check(p, lap, window) < 1e-6

    def test_finite_differences_regularized(self):
        lap = knn_lap(6, n=8)
        p = make_params("chebyshev", 8)
        rng = np.random.default_rng(7)
        window = 0.5 * rng.standard_normal((4, 8, 3))
        err = finite_difference_check(p, lap, window,
                                      loss_kind="graph_regularized",
                                      lambda_reg=0.4)
        assert err < 1e-6

    def test_relu_active_is_nearly_exact(self):
        # all-positive pre-activations make the loss piecewise quadratic
        lap = knn_lap(8, n=8)
        p = make_params("first_order", 8)
        p.activation = "relu"
        p.bias[:] = 5.0
        rng = np.random.default_rng(8)
        window = 0.1 * np.abs(rng.standard_normal((3, 8, 3)))
        assert finite_difference_check(p, lap, window, step=1e-4) < 1e-8

    def test_large_step_degrades_check(self):
        lap = knn_lap(9, n=8)
        p = make_params("chebyshev", 8)
        rng = np.random.default_rng(9)
        window = rng.standard_normal((4, 8, 3))
        small = finite_difference_check(p, lap, window, step=1e-5)
        large = finite_difference_check(p, lap, window, step=1e-1)
        assert large > small

    def test_descent_reduces_loss(self):
        lap = knn_lap(10, n=8)
        p = make_params("first_order", 8, seed=11)
        rng = np.random.default_rng(10)
        window = rng.standard_normal((5, 8, 3))
        loss0, _ = bptt(p, lap, window)
        for _ in range(50):
            _, grads = bptt(p, lap, window)
            theta = params_to_vector(p) - 1e-4 * grads.to_vector()
            vector_to_params(p, theta)
        loss1, _ = bptt(p, lap, window)
        assert loss1 < loss0


class TestAdam:
    def make(self, n):
        return AdamState(n, learning_rate=0.01)

    def test_zero_gradient_fixed_point(self):
        lap = knn_lap(11)
        p = make_params("first_order", 10)
        theta0 = params_to_vector(p).copy()
        from fgrnn.training import GradientSet
        grads = GradientSet(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3)),
                            0.0, 0.0, np.zeros(10), np.zeros(10))
        state = self.make(len(theta0))
        adam_step(state, p, grads)
        assert state.step == 1
        assert np.array_equal(params_to_vector(p), theta0)

    def test_first_step_magnitude(self):
        p = make_params("first_order", 4)
        theta0 = params_to_vector(p).copy()
        from fgrnn.training import GradientSet
        g = GradientSet(np.full((3, 3), 2.0), np.full((3, 3), -3.0),
                        np.full((3, 3), 0.5), 1.0, -1.0, np.full(4, 4.0),
                        np.full(4, -0.25))
        state = self.make(len(theta0))
        adam_step(state, p, g)
        delta = params_to_vector(p) - theta0
        gv = g.to_vector()
        # bias-corrected first step is close to -lr * sign(g) for |g| >> eps
        assert np.allclose(delta, -0.01 * np.sign(gv), atol=1e-6)

    def test_monotone_motion_against_gradient(self):
        p = make_params("first_order", 4)
        from fgrnn.training import GradientSet
        g = GradientSet(np.full((3, 3), 1.0), np.full((3, 3), 1.0),
                        np.full((3, 3), 1.0), 1.0, 1.0, np.full(4, 1.0),
                        np.full(4, 1.0))
        state = self.make(len(params_to_vector(p)))
        prev = params_to_vector(p).copy()
        for _ in range(2):
            adam_step(state, p, g)
            cur = params_to_vector(p)
            assert np.all(cur < prev)
            prev = cur.copy()


class TestCountParams:
    @pytest.mark.parametrize("family,kwargs,expected", [
        ("chebyshev", dict(k=3), 3015),
        ("first_order", dict(p=3), 3033),
        ("dense", dict(), 6771018),
        ("lstm_dense", dict(), 18054040),
        ("lstm_gcn", dict(k=3), 6032),
    ])
    def test_table_values(self, family, kwargs, expected):
        assert count_params(family, 1502, **kwargs) == expected

    def test_unknown_family(self):
        with pytest.raises(ContractViolation):
            count_params("gru", 10)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_enumerated_scalars(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 20))
        k = int(rng.integers(1, 6))
        p_dim = int(rng.integers(1, 6))
        for family, kwargs in [("chebyshev", dict(k=k)),
                               ("first_order", dict(p=p_dim)),
                               ("dense", dict())]:
            # Table counts assume F = P for the first-order family and
            # P = N for the dense baseline
            f = p_dim if family == "first_order" else n
            cfg = TrainConfig(family=family, k=k, p=p_dim, seed=seed)
            params = init_params(cfg, n, f)
            assert len(params_to_vector(params)) == count_params(family, n, **kwargs)


class TestTrainLoop:
    def small_dataset(self, seed=0):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((16, 3))
        g = build_knn_graph(pts, 3)
        t = np.arange(30)[:, None, None]
        frames = np.tile(pts, (30, 1, 1)) + 0.01 * np.sin(0.2 * t)
        return FrameSequence(frames), g

    def test_zero_epochs(self):
        seq, g = self.small_dataset()
        cfg = TrainConfig(epochs=0, seed=1)
        run = train(cfg, seq, g)
        assert run.epoch_losses == [] and run.epochs_done == 0
        expected = init_params(cfg, seq.n_nodes, seq.n_features)
        assert np.array_equal(params_to_vector(run.final_params),
                              params_to_vector(expected))

    def test_constant_sequence_learned(self):
        from fgrnn.data import SyntheticConfig, generate_synthetic
        cfg_data = SyntheticConfig(n_nodes=32, n_frames=120, rotation_rate=0.0,
                                   deformation_amplitude=0.0, noise_std=0.0)
        seq, g = generate_synthetic(cfg_data)
        assert np.array_equal(seq.frames[0], seq.frames[-1])
        cfg = TrainConfig(family="first_order", p=8, stride=1, seed=0)
        run = train(cfg, seq, g)
        assert run.epoch_losses[-1][0] < 1e-3

    def test_deterministic(self):
        seq, g = self.small_dataset(4)
        cfg = TrainConfig(epochs=3, t_w=5, seed=9)
        run1 = train(cfg, seq, g)
        run2 = train(cfg, seq, g)
        assert history_csv(run1) == history_csv(run2)
        assert np.array_equal(params_to_vector(run1.final_params),
                              params_to_vector(run2.final_params))

    def test_history_lengths_match(self):
        seq, g = self.small_dataset(5)
        run = train(TrainConfig(epochs=4, t_w=5, seed=5), seq, g)
        assert len(run.epoch_losses) == len(run.alpha_history) == 4
        assert len(run.beta_history) == len(run.lr_history) == 4


class TestConfigParsing:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg.family == "first_order" and cfg.epochs == 10

    def test_file_and_overrides(self):
        text = "family = chebyshev\nk = 5\n# comment\nlr = 0.5\n"
        cfg = parse_config(text, {"lr": "0.25", "epochs": "2"})
        assert cfg.family == "chebyshev" and cfg.k == 5
        assert cfg.lr == 0.25 and cfg.epochs == 2

    def test_unknown_key(self):
        from fgrnn.errors import ParseError
        with pytest.raises(ParseError):
            parse_config("bogus = 1\n")
