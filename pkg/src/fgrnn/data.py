"""Synthetic dynamic point clouds, frame-sequence file IO, dataset splits.

Frame file format: header line `gfrm 1 N F T`, then T blocks of N lines
with F space-separated decimals each; lines starting with `#` are
comments. Values are written with 17 significant digits so a round trip
is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ParseError
from .graph import Graph, build_knn_graph


@dataclass(frozen=True)
class FrameSequence:
    frames: np.ndarray  # (T, N, F)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise ContractViolation("frames must be a (T, N, F) array")
        if not np.all(np.isfinite(frames)):
            raise ContractViolation("frames contain non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.frames.shape[1]

    @property
    def n_features(self) -> int:
        return self.frames.shape[2]

    def __getitem__(self, t) -> np.ndarray:
        return self.frames[t]


@dataclass
class SyntheticConfig:
    n_nodes: int = 128
    n_frames: int = 200
    base_shape: str = "ring"  # ring | grid | cylinder
    rotation_rate: float = 0.03       # radians per frame about the z-axis
    deformation_amplitude: float = 0.3
    deformation_frequency: float = 3.0  # cycles over the whole sequence
    noise_std: float = 0.005
    seed: int = 1

    def __post_init__(self):
        if self.n_nodes < 4:
            raise ContractViolation("need n_nodes >= 4")
        if self.base_shape not in ("ring", "grid", "cylinder"):
            raise ContractViolation(
                f"unknown shape {self.base_shape!r}; valid: ring, grid, cylinder")
        if self.deformation_amplitude < 0 or self.noise_std < 0:
            raise ContractViolation("amplitudes must be >= 0")


def _base_points(cfg: SyntheticConfig) -> np.ndarray:
    n = cfg.n_nodes
    if cfg.base_shape == "ring":
        theta = 2.0 * np.pi * np.arange(n) / n
        return np.stack([np.cos(theta), np.sin(theta), np.zeros(n)], axis=1)
    if cfg.base_shape == "grid":
        side = int(math.ceil(math.sqrt(n)))
        xs, ys = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(side * side)], axis=1)
        return pts[:n] / max(side - 1, 1)
    # cylinder: rings stacked along z
    per_ring = max(4, int(round(math.sqrt(n * 4))))
    theta = 2.0 * np.pi * (np.arange(n) % per_ring) / per_ring
    z = (np.arange(n) // per_ring) * 0.3
    return np.stack([np.cos(theta), np.sin(theta), z], axis=1)


def generate_synthetic(cfg: SyntheticConfig):
    """Rigid rotation + smooth sinusoidal deformation + noise; returns
    (FrameSequence with F=3, kNN graph of the first frame with k=6)."""
    rng = np.random.default_rng(cfg.seed)
    base = _base_points(cfg)
    n, t_total = cfg.n_nodes, cfg.n_frames
    # fixed low-frequency spatial profile modulating the deformation
    angle_coord = np.arctan2(base[:, 1] - base[:, 1].mean(),
                             base[:, 0] - base[:, 0].mean())
    profile = np.sin(angle_coord) + 0.5 * np.cos(2.0 * angle_coord)
    frames = np.zeros((t_total, n, 3))
    for t in range(t_total):
        ang = t * cfg.rotation_rate
        c, s = math.cos(ang), math.sin(ang)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pts = base @ rot.T
        phase = 2.0 * np.pi * cfg.deformation_frequency * t / t_total
        pts[:, 2] += cfg.deformation_amplitude * math.sin(phase) * profile
        if cfg.noise_std > 0:
            pts = pts + cfg.noise_std * rng.standard_normal((n, 3))
        frames[t] = pts
    seq = FrameSequence(frames)
    graph = build_knn_graph(frames[0], k=6)
    return seq, graph


def save_frames(seq: FrameSequence, path):
    with open(path, "w") as fh:
        fh.write(f"gfrm 1 {seq.n_nodes} {seq.n_features} {seq.n_frames}\n")
        for t in range(seq.n_frames):
            for row in seq.frames[t]:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_frames(path) -> FrameSequence:
    with open(path) as fh:
        raw = fh.read().splitlines()
    lines = [(k + 1, ln) for k, ln in enumerate(raw)
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ParseError("empty frame file", line=1)
    lineno, head = lines[0]
    parts = head.split()
    if len(parts) != 5 or parts[0] != "gfrm" or parts[1] != "1":
        raise ParseError("expected header 'gfrm 1 N F T'", line=lineno)
    n, f, t_total = int(parts[2]), int(parts[3]), int(parts[4])
    body = lines[1:]
    expected = n * t_total
    if len(body) != expected:
        raise ParseError(
            f"expected {expected} data lines for T={t_total} frames of "
            f"N={n} nodes, found {len(body)}",
            line=body[-1][0] if body else lineno)
    frames = np.zeros((t_total, n, f))
    for k, (ln_no, ln) in enumerate(body):
        vals = ln.split()
        if len(vals) != f:
            raise ParseError(f"expected {f} values, found {len(vals)}", line=ln_no)
        frames[k // n, k % n] = [float(v) for v in vals]
    return FrameSequence(frames)


def split_train_test(seq: FrameSequence, ratio: float):
    """Chronological split at floor(ratio * T); train gets the prefix."""
    if not 0.0 < ratio < 1.0:
        raise ContractViolation("split ratio must be in (0, 1)")
    if seq.n_frames < 2:
        raise ContractViolation("need at least 2 frames to split")
    cut = int(math.floor(ratio * seq.n_frames))
    if cut == 0 or cut == seq.n_frames:
        raise ContractViolation("split produces an empty partition")
    return FrameSequence(seq.frames[:cut]), FrameSequence(seq.frames[cut:])
