"""Graph convolution operators, forward and reverse mode.

Two filter families:

  * Chebyshev: y = sum_k theta_k T_k(Ls) x, evaluated with the three-term
    recurrence T_k = 2 Ls T_{k-1} - T_{k-2}; feature dimension preserved.
  * First-order: y = L1 x W, single-hop node mixing composed with a
    dense feature transform W (F_in x F_out).

Both operators are symmetric in the node dimension, which is what makes
the backward formulas below exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .graph import LaplacianSet
from .sparse import SparseMatrix, dense_eig_sym, spmm


@dataclass
class ChebFilter:
    coeffs: np.ndarray  # length K

    def __post_init__(self):
        self.coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=np.float64))
        if self.coeffs.ndim != 1 or len(self.coeffs) < 1:
            raise ContractViolation("ChebFilter needs K >= 1 coefficients")
        if not np.all(np.isfinite(self.coeffs)):
            raise ContractViolation("ChebFilter coefficients must be finite")

    @property
    def order(self) -> int:
        return len(self.coeffs)


@dataclass
class FeatureTransform:
    weights: np.ndarray  # F_in x F_out

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ContractViolation("FeatureTransform weights must be 2-D")
        if not np.all(np.isfinite(self.weights)):
            raise ContractViolation("FeatureTransform weights must be finite")


def _cheb_apply(scaled: SparseMatrix, x: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    # T_0 x = x, T_1 x = Ls x, T_k x = 2 Ls T_{k-1} x - T_{k-2} x
    acc = coeffs[0] * x
    if len(coeffs) == 1:
        return acc
    t_prev, t_cur = x, spmm(scaled, x)
    acc = acc + coeffs[1] * t_cur
    for k in range(2, len(coeffs)):
        t_prev, t_cur = t_cur, 2.0 * spmm(scaled, t_cur) - t_prev
        acc = acc + coeffs[k] * t_cur
    return acc


def cheb_conv(lap: LaplacianSet, x: np.ndarray, f: ChebFilter) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != lap.n_nodes:
        raise ContractViolation(
            f"cheb_conv: {x.shape[0]} rows vs {lap.n_nodes} nodes")
    return _cheb_apply(lap.scaled, x, f.coeffs)


def cheb_conv_backward(lap: LaplacianSet, x: np.ndarray, f: ChebFilter,
                       upstream: np.ndarray):
    """Gradients of <upstream, cheb_conv(x)> w.r.t. coefficients and x."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape:
        raise ContractViolation("cheb_conv_backward: upstream shape mismatch")
    k_order = f.order
    grad_coeffs = np.zeros(k_order)
    t_prev, t_cur = x, None
    grad_coeffs[0] = np.sum(x * upstream)
    if k_order > 1:
        t_cur = spmm(lap.scaled, x)
        grad_coeffs[1] = np.sum(t_cur * upstream)
        for k in range(2, k_order):
            t_prev, t_cur = t_cur, 2.0 * spmm(lap.scaled, t_cur) - t_prev
            grad_coeffs[k] = np.sum(t_cur * upstream)
    # T_k(Ls) is symmetric, so grad_x is the same filter applied to upstream
    grad_x = _cheb_apply(lap.scaled, upstream, f.coeffs)
    return grad_x, grad_coeffs


def _node_operator(lap: LaplacianSet, use_plain_laplacian: bool) -> SparseMatrix:
    return lap.laplacian if use_plain_laplacian else lap.first_order


def first_order_conv(lap: LaplacianSet, x: np.ndarray, t: FeatureTransform,
                     use_plain_laplacian: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != lap.n_nodes:
        raise ContractViolation("first_order_conv: node count mismatch")
    if t.weights.shape[0] != x.shape[1]:
        raise ContractViolation(
            f"first_order_conv: {x.shape[1]} features vs "
            f"{t.weights.shape[0]} weight rows")
    return spmm(_node_operator(lap, use_plain_laplacian), x) @ t.weights


def first_order_conv_backward(lap: LaplacianSet, x: np.ndarray,
                              t: FeatureTransform, upstream: np.ndarray,
                              use_plain_laplacian: bool = False):
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (x.shape[0], t.weights.shape[1]):
        raise ContractViolation("first_order_conv_backward: upstream shape mismatch")
    op = _node_operator(lap, use_plain_laplacian)
    grad_w = spmm(op, x).T @ upstream
    grad_x = spmm(op, upstream) @ t.weights.T
    return grad_x, grad_w


def spectral_conv_oracle(lap: LaplacianSet, x: np.ndarray, f: ChebFilter) -> np.ndarray:
    """Frequency-domain evaluation of the Chebyshev filter; test oracle.

    Diagonalizes the scaled Laplacian and applies sum_k theta_k T_k(lam)
    per eigenvalue. Restricted to small graphs by the dense eigensolver.
    """
    n = lap.n_nodes
    if n > 64:
        raise ContractViolation("spectral_conv_oracle: n <= 64 only")
    x = np.asarray(x, dtype=np.float64)
    eigvals, eigvecs = dense_eig_sym(lap.scaled.to_dense())
    # scalar Chebyshev recurrence on each eigenvalue
    response = np.full(n, f.coeffs[0])
    if f.order > 1:
        t_prev, t_cur = np.ones(n), eigvals.copy()
        response = response + f.coeffs[1] * t_cur
        for k in range(2, f.order):
            t_prev, t_cur = t_cur, 2.0 * eigvals * t_cur - t_prev
            response = response + f.coeffs[k] * t_cur
    return eigvecs @ (response[:, None] * (eigvecs.T @ x))
