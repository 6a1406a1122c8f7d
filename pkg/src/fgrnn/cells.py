"""Recurrent cells: graph RNN with weighted residual, dense baseline, readout.

The cell update is

    h_tilde = act(conv(x; W) + conv(h_prev; U) + b 1^T)
    h       = alpha * h_tilde + beta * h_prev

with alpha = 1, beta = 0 reducing to the standard graph RNN. The readout
is x_hat = conv(h; V) + z 1^T in the same filter family. Biases b and z
are per-node and broadcast across feature columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .errors import ContractViolation, NumericOverflow, ParseError
from .gconv import (ChebFilter, FeatureTransform, cheb_conv,
                    cheb_conv_backward, first_order_conv,
                    first_order_conv_backward)
from .graph import LaplacianSet

FAMILIES = ("chebyshev", "first_order", "dense")

ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - np.tanh(a) ** 2),
    "relu": (lambda a: np.maximum(a, 0.0), lambda a: (a > 0.0).astype(np.float64)),
    "sigmoid": (lambda a: 1.0 / (1.0 + np.exp(-a)),
                lambda a: (s := 1.0 / (1.0 + np.exp(-a))) * (1.0 - s)),
}

Filter = Union[ChebFilter, FeatureTransform, np.ndarray]


@dataclass
class ModelParams:
    """Full trainable set {W, U, V, alpha, beta, b, z} for one filter family."""

    conv_family: str
    input_filter: Filter       # W
    recurrent_filter: Filter   # U
    readout_filter: Filter     # V
    alpha: float
    beta: float
    bias: np.ndarray           # b, length N (length P for the dense baseline)
    readout_bias: np.ndarray   # z, length N
    activation: str = "tanh"
    use_plain_laplacian: bool = field(default=False)

    def __post_init__(self):
        if self.conv_family not in FAMILIES:
            raise ContractViolation(f"unknown family {self.conv_family!r}")
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"unknown activation {self.activation!r}")
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.readout_bias = np.asarray(self.readout_bias, dtype=np.float64)

    def copy(self) -> "ModelParams":
        def cp(f):
            if isinstance(f, ChebFilter):
                return ChebFilter(f.coeffs.copy())
            if isinstance(f, FeatureTransform):
                return FeatureTransform(f.weights.copy())
            return np.array(f, dtype=np.float64)
        return replace(self, input_filter=cp(self.input_filter),
                       recurrent_filter=cp(self.recurrent_filter),
                       readout_filter=cp(self.readout_filter),
                       bias=self.bias.copy(), readout_bias=self.readout_bias.copy())


def conv_apply(p: ModelParams, lap: LaplacianSet, x: np.ndarray,
               filt: Filter) -> np.ndarray:
    if p.conv_family == "chebyshev":
        return cheb_conv(lap, x, filt)
    if p.conv_family == "first_order":
        return first_order_conv(lap, x, filt, p.use_plain_laplacian)
    raise ContractViolation("conv_apply: dense family has no graph convolution")


def conv_backward(p: ModelParams, lap: LaplacianSet, x: np.ndarray,
                  filt: Filter, upstream: np.ndarray):
    if p.conv_family == "chebyshev":
        return cheb_conv_backward(lap, x, filt, upstream)
    if p.conv_family == "first_order":
        return first_order_conv_backward(lap, x, filt, upstream,
                                         p.use_plain_laplacian)
    raise ContractViolation("conv_backward: dense family has no graph convolution")


def preactivation(p: ModelParams, lap: LaplacianSet, h_prev: np.ndarray,
                  x: np.ndarray) -> np.ndarray:
    a = (conv_apply(p, lap, x, p.input_filter)
         + conv_apply(p, lap, h_prev, p.recurrent_filter)
         + p.bias[:, None])
    if not np.all(np.isfinite(a)):
        raise NumericOverflow("non-finite pre-activation")
    return a


def fgrnn_step(p: ModelParams, lap: LaplacianSet, h_prev: np.ndarray,
               x: np.ndarray):
    """One recurrent step; returns (h_tilde, h)."""
    a = preactivation(p, lap, h_prev, x)
    act = ACTIVATIONS[p.activation][0]
    h_tilde = act(a)
    h = p.alpha * h_tilde + p.beta * h_prev
    return h_tilde, h


def frnn_step(p: ModelParams, h_prev: np.ndarray, x: np.ndarray):
    """Dense-domain baseline step on vectorized signals (W: PxN, U: PxP)."""
    if p.conv_family != "dense":
        raise ContractViolation("frnn_step requires the dense family")
    a = p.input_filter @ x + p.recurrent_filter @ h_prev + p.bias
    if not np.all(np.isfinite(a)):
        raise NumericOverflow("non-finite pre-activation")
    act = ACTIVATIONS[p.activation][0]
    h_tilde = act(a)
    return h_tilde, p.alpha * h_tilde + p.beta * h_prev


def readout(p: ModelParams, lap: LaplacianSet, h: np.ndarray) -> np.ndarray:
    return conv_apply(p, lap, h, p.readout_filter) + p.readout_bias[:, None]


# --- checkpoint IO ---------------------------------------------------------

def _write_array(fh, name, arr):
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    fh.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
    for row in arr:
        fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def _filter_payload(filt):
    if isinstance(filt, ChebFilter):
        return filt.coeffs
    if isinstance(filt, FeatureTransform):
        return filt.weights
    return filt


def save_checkpoint(p: ModelParams, path, graph_checksum: str,
                    train_state: dict | None = None):
    """Plain-text checkpoint; round-trips exactly at 17 significant digits."""
    with open(path, "w") as fh:
        fh.write("fgrnn-checkpoint 1\n")
        fh.write(f"family {p.conv_family}\n")
        fh.write(f"activation {p.activation}\n")
        fh.write(f"use_plain_laplacian {int(p.use_plain_laplacian)}\n")
        fh.write(f"graph_checksum {graph_checksum}\n")
        fh.write(f"alpha {p.alpha:.17g}\n")
        fh.write(f"beta {p.beta:.17g}\n")
        for name, filt in (("W", p.input_filter), ("U", p.recurrent_filter),
                           ("V", p.readout_filter)):
            _write_array(fh, name, _filter_payload(filt))
        _write_array(fh, "b", p.bias)
        _write_array(fh, "z", p.readout_bias)
        if train_state is not None:
            fh.write(f"epoch {train_state['epoch']}\n")
            fh.write(f"adam_step {train_state['adam_step']}\n")
            fh.write(f"lr {train_state['lr']:.17g}\n")
            _write_array(fh, "adam_m", train_state["adam_m"])
            _write_array(fh, "adam_v", train_state["adam_v"])


def load_checkpoint(path):
    """Returns (ModelParams, graph_checksum, train_state or None)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "fgrnn-checkpoint 1":
        raise ParseError("not a checkpoint file", line=1)
    scalars, arrays = {}, {}
    k = 1
    while k < len(lines):
        parts = lines[k].split()
        if len(parts) == 3 and parts[0] in ("W", "U", "V", "b", "z",
                                            "adam_m", "adam_v"):
            rows, cols = int(parts[1]), int(parts[2])
            block = [
                [float(v) for v in lines[k + 1 + r].split()]
                for r in range(rows)
            ]
            arrays[parts[0]] = np.array(block, dtype=np.float64).reshape(rows, cols)
            k += rows + 1
        else:
            scalars[parts[0]] = parts[1]
            k += 1
    family = scalars["family"]
    if family == "chebyshev":
        wrap = lambda a: ChebFilter(a.ravel())
    elif family == "first_order":
        wrap = lambda a: FeatureTransform(a)
    else:
        wrap = lambda a: a
    p = ModelParams(
        conv_family=family,
        input_filter=wrap(arrays["W"]),
        recurrent_filter=wrap(arrays["U"]),
        readout_filter=wrap(arrays["V"]),
        alpha=float(scalars["alpha"]),
        beta=float(scalars["beta"]),
        bias=arrays["b"].ravel(),
        readout_bias=arrays["z"].ravel(),
        activation=scalars["activation"],
        use_plain_laplacian=bool(int(scalars.get("use_plain_laplacian", "0"))),
    )
    train_state = None
    if "epoch" in scalars:
        train_state = {
            "epoch": int(scalars["epoch"]),
            "adam_step": int(scalars["adam_step"]),
            "lr": float(scalars["lr"]),
            "adam_m": arrays["adam_m"].ravel(),
            "adam_v": arrays["adam_v"].ravel(),
        }
    return p, scalars["graph_checksum"], train_state
