"""Gradient-stability diagnostics for the scalar-recurrent-weight cell.

Restricted to the first-order family with hidden width 1, where the
step Jacobian dh_t/dh_{t-1} = alpha * D_t * u * L1 + beta * I is a
literal N x N matrix (D_t = diag of activation derivatives at step t,
u = the scalar recurrent weight). The product of step Jacobians over a
window governs gradient growth; its condition number is compared to the
closed-form bound

    ((1 + r) / (1 - r))^(T-2),  r = (alpha/beta) * max_t ||D_t u L1||_F^2

which is finite only for r < 1. The product is taken over T-2 factors,
matching the convention used in the growth analysis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cells import ACTIVATIONS, ModelParams, preactivation
from .errors import ContractViolation
from .gconv import FeatureTransform
from .graph import Graph, LaplacianSet, build_laplacians
from .training import _filter_array


@dataclass
class StabilityReport:
    per_step_jacobian_norm: list
    sigma_max: float
    sigma_min: float
    condition_number: float  # inf when the product is singular
    bound: float | None      # None when the bound is vacuous
    alpha: float
    beta: float
    horizon: int


def _check_scalar_cell(p: ModelParams, lap: LaplacianSet):
    if p.conv_family != "first_order":
        raise ContractViolation("stability diagnostics need the first_order family")
    u = _filter_array(p.recurrent_filter)
    if u.shape != (1, 1):
        raise ContractViolation("stability diagnostics need hidden width 1")
    if lap.n_nodes > 2048:
        raise ContractViolation("stability diagnostics limited to N <= 2048")
    return float(u[0, 0])


def _node_operator_dense(p: ModelParams, lap: LaplacianSet) -> np.ndarray:
    op = lap.laplacian if p.use_plain_laplacian else lap.first_order
    return op.to_dense()


def step_jacobian(p: ModelParams, lap: LaplacianSet, h_prev: np.ndarray,
                  x: np.ndarray) -> np.ndarray:
    """dh_t/dh_{t-1} = alpha * D_t * u * L1 + beta * I as a dense matrix."""
    u = _check_scalar_cell(p, lap)
    a = preactivation(p, lap, h_prev, x)
    d = ACTIVATIONS[p.activation][1](a)[:, 0]
    op = _node_operator_dense(p, lap)
    return p.alpha * u * (d[:, None] * op) + p.beta * np.eye(lap.n_nodes)


def _forward_activation_derivs(p: ModelParams, lap: LaplacianSet,
                               frames: np.ndarray, horizon: int):
    """Runs the cell over `horizon` frames; returns per-step derivative
    diagonals d_t (t = 1..horizon) and hidden states."""
    act, act_deriv = ACTIVATIONS[p.activation]
    n = frames.shape[1]
    h = np.zeros((n, 1))
    d_list = []
    for t in range(horizon):
        a = preactivation(p, lap, h, frames[t])
        d_list.append(act_deriv(a)[:, 0])
        h = p.alpha * act(a) + p.beta * h
    return d_list


def condition_bound(p: ModelParams, d_list, lap: LaplacianSet,
                    horizon: int) -> float | None:
    """Closed-form condition-number bound; None when vacuous (r >= 1 or
    beta = 0)."""
    u = _check_scalar_cell(p, lap)
    if horizon < 2:
        raise ContractViolation("condition_bound: need T >= 2")
    if p.beta == 0.0:
        return None
    op = _node_operator_dense(p, lap)
    worst = max(float(np.sum((d[:, None] * (u * op)) ** 2)) for d in d_list)
    r = (p.alpha / p.beta) * worst
    if r >= 1.0:
        return None
    return ((1.0 + r) / (1.0 - r)) ** (horizon - 2)


def jacobian_product(p: ModelParams, lap: LaplacianSet, window,
                     horizon: int) -> StabilityReport:
    """Product of the last T-2 step Jacobians and its extreme singular
    values; fills a StabilityReport including the closed-form bound."""
    u = _check_scalar_cell(p, lap)
    frames = np.asarray(window, dtype=np.float64)
    if horizon < 2:
        raise ContractViolation("jacobian_product: need T >= 2")
    if frames.shape[0] < horizon:
        raise ContractViolation("jacobian_product: window shorter than T")
    act, act_deriv = ACTIVATIONS[p.activation]
    n = frames.shape[1]
    op = _node_operator_dense(p, lap)
    eye = np.eye(n)

    h = np.zeros((n, 1))
    step_norms = []
    d_list = []
    product = eye.copy()
    for t in range(horizon):
        a = preactivation(p, lap, h, frames[t])
        d = act_deriv(a)[:, 0]
        d_list.append(d)
        jac = p.alpha * u * (d[:, None] * op) + p.beta * eye
        if t >= 1:
            step_norms.append(float(np.linalg.norm(jac, 2)))
        if t >= 2:  # T-2 factors: steps 3..T in 1-based time
            product = jac @ product
        h = p.alpha * act(a) + p.beta * h

    svals = np.linalg.svd(product, compute_uv=False)
    sigma_max, sigma_min = float(svals[0]), float(svals[-1])
    cond = sigma_max / sigma_min if sigma_min > 0.0 else math.inf
    bound = condition_bound(p, d_list, lap, horizon)
    return StabilityReport(step_norms, sigma_max, sigma_min, cond, bound,
                           p.alpha, p.beta, horizon)


def scalar_cell_params(u: float, n_nodes: int, w: float = 0.0, b: float = 0.0,
                       n_features: int = 1, activation: str = "relu",
                       alpha: float = 1.0, beta: float = 0.0,
                       use_plain_laplacian: bool = False) -> ModelParams:
    """Convenience constructor for the width-1 diagnostic cell."""
    return ModelParams(
        conv_family="first_order",
        input_filter=FeatureTransform(np.full((n_features, 1), w)),
        recurrent_filter=FeatureTransform(np.array([[u]])),
        readout_filter=FeatureTransform(np.zeros((1, n_features))),
        alpha=alpha, beta=beta,
        bias=np.full(n_nodes, b), readout_bias=np.zeros(n_nodes),
        activation=activation, use_plain_laplacian=use_plain_laplacian)


def stability_sweep(g: Graph, base_params: ModelParams, alpha_grid,
                    beta_grid, t_grid, seed: int = 0):
    """One StabilityReport per (alpha, beta, T) grid point, lexicographic,
    on a fixed synthetic window drawn from the given seed."""
    if not (len(alpha_grid) and len(beta_grid) and len(t_grid)):
        raise ContractViolation("stability_sweep: grids must be non-empty")
    lap = build_laplacians(g)
    rng = np.random.default_rng(seed)
    n_feat = _filter_array(base_params.input_filter).shape[0]
    frames = rng.standard_normal((max(t_grid), g.n_nodes, n_feat))
    rows = []
    for alpha in sorted(alpha_grid):
        for beta in sorted(beta_grid):
            for horizon in sorted(t_grid):
                p = base_params.copy()
                p.alpha, p.beta = float(alpha), float(beta)
                rows.append(jacobian_product(p, lap, frames, horizon))
    return rows


def sweep_csv(rows) -> str:
    lines = ["alpha,beta,T,sigma_max,sigma_min,cond,bound_M"]
    for r in rows:
        bound = f"{r.bound:.17g}" if r.bound is not None else "nan"
        cond = f"{r.condition_number:.17g}" if math.isfinite(r.condition_number) else "inf"
        lines.append(f"{r.alpha:.17g},{r.beta:.17g},{r.horizon},"
                     f"{r.sigma_max:.17g},{r.sigma_min:.17g},{cond},{bound}")
    return "\n".join(lines) + "\n"
