"""Losses, truncated BPTT, Adam, gradient verification, parameter counts.

The reverse pass is exact backpropagation through the unrolled cell,
including the residual weights alpha and beta (dJ/dalpha sums
<dJ/dh_t, h_tilde_t>; dJ/dbeta sums <dJ/dh_t, h_{t-1}>, with the
recursive path through h_prev handled by the accumulated hidden-state
gradient). Every gradient is verified against central finite
differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .cells import (ACTIVATIONS, ModelParams, conv_apply, conv_backward,
                    preactivation, readout)
from .data import FrameSequence, split_train_test
from .errors import ContractViolation, NumericOverflow, ParseError
from .gconv import ChebFilter, FeatureTransform
from .graph import Graph, LaplacianSet, build_laplacians
from .sparse import spmm


# --- losses ----------------------------------------------------------------

def prediction_loss(x_hat: np.ndarray, x: np.ndarray) -> float:
    if x_hat.shape != x.shape:
        raise ContractViolation(
            f"prediction_loss: shapes {x_hat.shape} vs {x.shape}")
    d = x_hat - x
    return float(np.sum(d * d))


def graph_regularized_loss(x_hat: np.ndarray, x: np.ndarray,
                           lap: LaplacianSet, lambda_reg: float) -> float:
    """Prediction loss plus lambda * tr(x_hat^T L x_hat).

    The regularizer is applied to the prediction so the term carries
    gradient; applied to the ground truth it would be a constant.
    """
    if lambda_reg < 0:
        raise ContractViolation("lambda_reg must be >= 0")
    base = prediction_loss(x_hat, x)
    if lambda_reg == 0.0:
        return base
    return base + lambda_reg * float(np.sum(x_hat * spmm(lap.laplacian, x_hat)))


# --- parameter vectorization -------------------------------------------------

def _filter_array(filt):
    if isinstance(filt, ChebFilter):
        return filt.coeffs
    if isinstance(filt, FeatureTransform):
        return filt.weights
    return filt


def params_to_vector(p: ModelParams) -> np.ndarray:
    parts = [_filter_array(p.input_filter).ravel(),
             _filter_array(p.recurrent_filter).ravel(),
             _filter_array(p.readout_filter).ravel(),
             [p.alpha, p.beta], p.bias.ravel(), p.readout_bias.ravel()]
    return np.concatenate([np.asarray(a, dtype=np.float64) for a in parts])


def vector_to_params(p: ModelParams, vec: np.ndarray):
    """Writes vec back into p in the order used by params_to_vector."""
    off = 0
    for filt in (p.input_filter, p.recurrent_filter, p.readout_filter):
        arr = _filter_array(filt)
        arr.flat[:] = vec[off:off + arr.size]
        off += arr.size
    p.alpha = float(vec[off])
    p.beta = float(vec[off + 1])
    off += 2
    p.bias[:] = vec[off:off + p.bias.size]
    off += p.bias.size
    p.readout_bias[:] = vec[off:off + p.readout_bias.size]
    off += p.readout_bias.size
    if off != len(vec):
        raise ContractViolation("vector length does not match parameter count")


@dataclass
class GradientSet:
    grad_input: np.ndarray      # dJ/dW (filter-shaped)
    grad_recurrent: np.ndarray  # dJ/dU
    grad_readout: np.ndarray    # dJ/dV
    grad_alpha: float
    grad_beta: float
    grad_bias: np.ndarray
    grad_readout_bias: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.grad_input.ravel(), self.grad_recurrent.ravel(),
            self.grad_readout.ravel(), [self.grad_alpha, self.grad_beta],
            self.grad_bias.ravel(), self.grad_readout_bias.ravel()])


# --- BPTT --------------------------------------------------------------------

def _hidden_width(p: ModelParams, n_features: int) -> int:
    if p.conv_family == "chebyshev":
        return n_features
    return _filter_array(p.input_filter).shape[1]


def _window_loss(p: ModelParams, lap: LaplacianSet, frames: np.ndarray,
                 loss_kind: str, lambda_reg: float) -> float:
    """Forward-only total loss over a window; used by the FD checker."""
    n = frames.shape[1]
    h = np.zeros((n, _hidden_width(p, frames.shape[2])))
    act = ACTIVATIONS[p.activation][0]
    total = 0.0
    for t in range(frames.shape[0] - 1):
        a = preactivation(p, lap, h, frames[t])
        h_tilde = act(a)
        h = p.alpha * h_tilde + p.beta * h
        x_hat = readout(p, lap, h)
        if loss_kind == "graph_regularized":
            total += graph_regularized_loss(x_hat, frames[t + 1], lap, lambda_reg)
        else:
            total += prediction_loss(x_hat, frames[t + 1])
    return total


def bptt(p: ModelParams, lap: LaplacianSet, window: np.ndarray,
         loss_kind: str = "prediction", lambda_reg: float = 0.0):
    """Exact gradients of the summed per-step loss over one window.

    window is a (T_w+1, N, F) array; step t consumes frame t and is
    scored against frame t+1. Returns (loss, GradientSet).
    """
    window = np.asarray(window, dtype=np.float64)
    t_w = window.shape[0] - 1
    if t_w < 1:
        raise ContractViolation("bptt: window needs at least 2 frames")
    n, n_feat = window.shape[1], window.shape[2]
    width = _hidden_width(p, n_feat)
    act, act_deriv = ACTIVATIONS[p.activation]

    h = np.zeros((n, width))
    pre, h_tildes, h_prevs, h_states, x_hats = [], [], [], [], []
    total = 0.0
    for t in range(t_w):
        try:
            a = preactivation(p, lap, h, window[t])
        except NumericOverflow as exc:
            raise NumericOverflow(f"step {t + 1}: {exc}") from None
        h_tilde = act(a)
        h_prevs.append(h)
        h = p.alpha * h_tilde + p.beta * h
        x_hat = readout(p, lap, h)
        if loss_kind == "graph_regularized":
            step_loss = graph_regularized_loss(x_hat, window[t + 1], lap, lambda_reg)
        else:
            step_loss = prediction_loss(x_hat, window[t + 1])
        if not math.isfinite(step_loss):
            raise NumericOverflow(f"step {t + 1}: non-finite loss")
        total += step_loss
        pre.append(a)
        h_tildes.append(h_tilde)
        h_states.append(h)
        x_hats.append(x_hat)

    g_w = np.zeros_like(_filter_array(p.input_filter))
    g_u = np.zeros_like(_filter_array(p.recurrent_filter))
    g_v = np.zeros_like(_filter_array(p.readout_filter))
    g_alpha = 0.0
    g_beta = 0.0
    g_b = np.zeros(n)
    g_z = np.zeros(n)
    g_h = np.zeros((n, width))  # dJ/dh_t flowing back from later steps

    for t in reversed(range(t_w)):
        d_xhat = 2.0 * (x_hats[t] - window[t + 1])
        if loss_kind == "graph_regularized" and lambda_reg > 0.0:
            d_xhat = d_xhat + 2.0 * lambda_reg * spmm(lap.laplacian, x_hats[t])
        g_z += d_xhat.sum(axis=1)
        gh_read, gv_t = conv_backward(p, lap, h_states[t], p.readout_filter, d_xhat)
        g_v += gv_t
        g_h_total = g_h + gh_read
        g_alpha += float(np.sum(g_h_total * h_tildes[t]))
        g_beta += float(np.sum(g_h_total * h_prevs[t]))
        g_a = p.alpha * g_h_total * act_deriv(pre[t])
        g_b += g_a.sum(axis=1)
        _, gw_t = conv_backward(p, lap, window[t], p.input_filter, g_a)
        g_w += gw_t
        gh_prev, gu_t = conv_backward(p, lap, h_prevs[t], p.recurrent_filter, g_a)
        g_u += gu_t
        g_h = p.beta * g_h_total + gh_prev

    grads = GradientSet(g_w, g_u, g_v, g_alpha, g_beta, g_b, g_z)
    if not np.all(np.isfinite(grads.to_vector())):
        raise NumericOverflow("non-finite gradient in window")
    return total, grads


def finite_difference_check(p: ModelParams, lap: LaplacianSet,
                            window: np.ndarray, step: float = 1e-5,
                            loss_kind: str = "prediction",
                            lambda_reg: float = 0.0) -> float:
    """Max relative error between BPTT and central finite differences."""
    if step <= 0:
        raise ContractViolation("step must be > 0")
    _, grads = bptt(p, lap, window, loss_kind, lambda_reg)
    analytic = grads.to_vector()
    theta = params_to_vector(p)
    worst = 0.0
    work = p.copy()
    for k in range(len(theta)):
        for sign, out in ((+1, "plus"), (-1, "minus")):
            pert = theta.copy()
            pert[k] += sign * step
            vector_to_params(work, pert)
            if sign > 0:
                j_plus = _window_loss(work, lap, window, loss_kind, lambda_reg)
            else:
                j_minus = _window_loss(work, lap, window, loss_kind, lambda_reg)
        numeric = (j_plus - j_minus) / (2.0 * step)
        denom = max(abs(analytic[k]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[k] - numeric) / denom)
    return worst


# --- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    n_params: int
    learning_rate: float = 1e-2
    lr_decay_per_epoch: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: np.ndarray = field(default=None)
    second_moment: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.first_moment is None:
            self.first_moment = np.zeros(self.n_params)
        if self.second_moment is None:
            self.second_moment = np.zeros(self.n_params)


def adam_step(state: AdamState, p: ModelParams, grads: GradientSet,
              lr: float | None = None):
    """One bias-corrected Adam update, in place; returns (state, p)."""
    g = grads.to_vector()
    if len(g) != state.n_params:
        raise ContractViolation("adam_step: gradient size mismatch")
    state.step += 1
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * g
    state.second_moment = (state.beta2 * state.second_moment
                           + (1 - state.beta2) * g * g)
    m_hat = state.first_moment / (1.0 - state.beta1 ** state.step)
    v_hat = state.second_moment / (1.0 - state.beta2 ** state.step)
    eta = state.learning_rate if lr is None else lr
    theta = params_to_vector(p)
    theta -= eta * m_hat / (np.sqrt(v_hat) + state.epsilon)
    vector_to_params(p, theta)
    return state, p


# --- parameter counting -------------------------------------------------------

def count_params(family: str, n: int, k: int = 0, p: int = 0) -> int:
    """Trainable-parameter counts per filter family (N nodes)."""
    if n < 1:
        raise ContractViolation("count_params: n must be positive")
    if family == "chebyshev":
        if k < 1:
            raise ContractViolation("count_params: chebyshev needs K >= 1")
        return 3 * k + 2 * n + 2
    if family == "first_order":
        if p < 1:
            raise ContractViolation("count_params: first_order needs P >= 1")
        return 3 * p * p + 2 * n + 2
    if family == "dense":
        return 3 * n * n + 2 * n + 2
    if family == "lstm_dense":
        return 8 * n * n + 4 * n
    if family == "lstm_gcn":
        if k < 1:
            raise ContractViolation("count_params: lstm_gcn needs K >= 1")
        return 4 * n + 8 * k
    raise ContractViolation(f"count_params: unknown family {family!r}")


# --- configuration and the training loop --------------------------------------

@dataclass
class TrainConfig:
    family: str = "first_order"
    k: int = 3            # Chebyshev order
    p: int = 3            # hidden width for the first-order family
    t_w: int = 10         # BPTT window length
    stride: int = 0       # 0 means stride = t_w (non-overlapping)
    epochs: int = 10
    lr: float = 1e-2
    lr_decay: float = 0.9
    split: float = 0.8
    activation: str = "tanh"
    lambda_reg: float = 0.0
    seed: int = 0
    init_scale: float = 0.1
    use_plain_laplacian: bool = False

    @property
    def loss_kind(self) -> str:
        return "graph_regularized" if self.lambda_reg > 0 else "prediction"

    @property
    def effective_stride(self) -> int:
        return self.stride if self.stride > 0 else self.t_w


_CONFIG_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def parse_config(text: str, overrides: dict | None = None) -> TrainConfig:
    """key = value lines; '#' comments; overrides win over file values."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line=lineno)
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    if overrides:
        values.update(overrides)
    cfg = TrainConfig()
    for key, val in values.items():
        if key not in _CONFIG_TYPES:
            raise ParseError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, bool):
            setattr(cfg, key, val.strip().lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(cfg, key, int(val))
        elif isinstance(current, float):
            setattr(cfg, key, float(val))
        else:
            setattr(cfg, key, val)
    return cfg


def init_params(cfg: TrainConfig, n_nodes: int, n_features: int) -> ModelParams:
    """Small symmetric filter init; alpha = beta = 0.5; zero biases."""
    rng = np.random.default_rng(cfg.seed)
    s = cfg.init_scale
    if cfg.family == "chebyshev":
        make = lambda shape: ChebFilter(rng.uniform(-s, s, size=cfg.k))
        w, u, v = make(None), make(None), make(None)
    elif cfg.family == "first_order":
        w = FeatureTransform(rng.uniform(-s, s, size=(n_features, cfg.p)))
        u = FeatureTransform(rng.uniform(-s, s, size=(cfg.p, cfg.p)))
        v = FeatureTransform(rng.uniform(-s, s, size=(cfg.p, n_features)))
    elif cfg.family == "dense":
        w = rng.uniform(-s, s, size=(n_nodes, n_nodes))
        u = rng.uniform(-s, s, size=(n_nodes, n_nodes))
        v = rng.uniform(-s, s, size=(n_nodes, n_nodes))
    else:
        raise ContractViolation(f"init_params: unknown family {cfg.family!r}")
    return ModelParams(
        conv_family=cfg.family, input_filter=w, recurrent_filter=u,
        readout_filter=v, alpha=0.5, beta=0.5,
        bias=np.zeros(n_nodes), readout_bias=np.zeros(n_nodes),
        activation=cfg.activation, use_plain_laplacian=cfg.use_plain_laplacian)


def teacher_forced_losses(p: ModelParams, lap: LaplacianSet,
                          frames: np.ndarray,
                          h0: np.ndarray | None = None):
    """Per-transition prediction losses; returns (losses, final hidden)."""
    act = ACTIVATIONS[p.activation][0]
    n = frames.shape[1]
    h = np.zeros((n, _hidden_width(p, frames.shape[2]))) if h0 is None else h0
    losses = []
    for t in range(frames.shape[0] - 1):
        a = preactivation(p, lap, h, frames[t])
        h = p.alpha * act(a) + p.beta * h
        losses.append(prediction_loss(readout(p, lap, h), frames[t + 1]))
    return losses, h


def run_hidden(p: ModelParams, lap: LaplacianSet, frames: np.ndarray,
               h0: np.ndarray | None = None) -> np.ndarray:
    """Consume frames teacher-forced and return the final hidden state."""
    act = ACTIVATIONS[p.activation][0]
    n = frames.shape[1]
    h = np.zeros((n, _hidden_width(p, frames.shape[2]))) if h0 is None else h0
    for t in range(frames.shape[0]):
        a = preactivation(p, lap, h, frames[t])
        h = p.alpha * act(a) + p.beta * h
    return h


@dataclass
class TrainRun:
    epoch_losses: list          # (train_loss, test_loss) per epoch
    alpha_history: list
    beta_history: list
    lr_history: list
    final_params: ModelParams
    config: TrainConfig
    adam: AdamState
    epochs_done: int
    aborted: bool = False


def _windows(n_train: int, t_w: int, stride: int):
    starts = list(range(0, max(n_train - 1, 0), stride))
    out = []
    for s in starts:
        end = min(s + t_w + 1, n_train)
        if end - s >= 2:
            out.append((s, end))
    return out


def evaluate(p: ModelParams, lap: LaplacianSet, train_frames: np.ndarray,
             test_frames: np.ndarray):
    """(mean train transition loss, mean test transition loss).

    Test transitions are warm-started: the hidden state is carried
    through the whole training partition, and each test frame is scored
    as a one-step teacher-forced prediction (last train frame included
    as the first input, so every test frame is a target).
    """
    train_losses, _ = teacher_forced_losses(p, lap, train_frames)
    h_warm = run_hidden(p, lap, train_frames[:-1])
    tail = np.concatenate([train_frames[-1:], test_frames], axis=0)
    test_losses, _ = teacher_forced_losses(p, lap, tail, h0=h_warm)
    return float(np.mean(train_losses)), float(np.mean(test_losses))


def train(cfg: TrainConfig, dataset: FrameSequence, g: Graph,
          initial: ModelParams | None = None,
          resume_state: dict | None = None) -> TrainRun:
    """Windowed BPTT + Adam over the chronological training partition."""
    lap = build_laplacians(g)
    train_seq, test_seq = split_train_test(dataset, cfg.split)
    train_frames, test_frames = train_seq.frames, test_seq.frames
    p = initial if initial is not None else init_params(
        cfg, dataset.n_nodes, dataset.n_features)
    n_params = len(params_to_vector(p))
    adam = AdamState(n_params, learning_rate=cfg.lr,
                     lr_decay_per_epoch=cfg.lr_decay)
    epoch_start = 0
    if resume_state is not None:
        adam.step = resume_state["adam_step"]
        adam.first_moment = resume_state["adam_m"].copy()
        adam.second_moment = resume_state["adam_v"].copy()
        epoch_start = resume_state["epoch"]
    windows = _windows(len(train_frames), cfg.t_w, cfg.effective_stride)

    epoch_losses, alphas, betas, lrs = [], [], [], []
    epochs_done = epoch_start
    try:
        for epoch in range(epoch_start, epoch_start + cfg.epochs):
            lr = cfg.lr * cfg.lr_decay ** epoch
            for s, e in windows:
                _, grads = bptt(p, lap, train_frames[s:e],
                                cfg.loss_kind, cfg.lambda_reg)
                adam_step(adam, p, grads, lr=lr)
            train_loss, test_loss = evaluate(p, lap, train_frames, test_frames)
            epoch_losses.append((train_loss, test_loss))
            alphas.append(p.alpha)
            betas.append(p.beta)
            lrs.append(lr)
            epochs_done = epoch + 1
    except NumericOverflow:
        # abort with partial history; caller decides how to report
        return TrainRun(epoch_losses, alphas, betas, lrs, p, cfg, adam,
                        epochs_done, aborted=True)
    return TrainRun(epoch_losses, alphas, betas, lrs, p, cfg, adam, epochs_done)


def history_csv(run: TrainRun, epoch_offset: int = 0) -> str:
    lines = ["epoch,train_loss,test_loss,alpha,beta,lr"]
    for i, (tr, te) in enumerate(run.epoch_losses):
        lines.append(f"{epoch_offset + i + 1},{tr:.17g},{te:.17g},"
                     f"{run.alpha_history[i]:.17g},"
                     f"{run.beta_history[i]:.17g},{run.lr_history[i]:.17g}")
    return "\n".join(lines) + "\n"
