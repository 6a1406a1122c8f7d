"""Graph construction and normalized Laplacian operators.

A graph is an undirected positively-weighted edge list; the Laplacian
set bundles the three operators the convolution layers need:

    L   = I - D^{-1/2} A D^{-1/2}          (spectrum in [0, 2])
    Ls  = 2 L / lambda_max - I             (spectrum in [-1, 1])
    L1  = I + D^{-1/2} A D^{-1/2} = 2I - L (single-hop operator)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ParseError
from .sparse import SparseMatrix, power_iteration


@dataclass(frozen=True)
class Graph:
    n_nodes: int
    edges: tuple  # of (i, j, w) with i < j, w > 0

    def __post_init__(self):
        seen = set()
        for i, j, w in self.edges:
            if not (0 <= i < j < self.n_nodes):
                raise ContractViolation(f"bad edge ({i}, {j})")
            if w <= 0:
                raise ContractViolation(f"edge ({i}, {j}) has non-positive weight")
            if (i, j) in seen:
                raise ContractViolation(f"duplicate edge ({i}, {j})")
            seen.add((i, j))

    def adjacency(self) -> SparseMatrix:
        rows, cols, vals = [], [], []
        for i, j, w in self.edges:
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
        return SparseMatrix.from_coo(self.n_nodes, self.n_nodes, rows, cols, vals)

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n_nodes)
        for i, j, w in self.edges:
            d[i] += w
            d[j] += w
        return d

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.n_nodes}\n".encode())
        for i, j, w in self.edges:
            h.update(f"{i} {j} {w:.17g}\n".encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class LaplacianSet:
    laplacian: SparseMatrix    # L
    scaled: SparseMatrix       # 2L/lambda_max - I
    first_order: SparseMatrix  # 2I - L
    lambda_max: float
    degree: np.ndarray
    lambda_max_converged: bool = True

    @property
    def n_nodes(self) -> int:
        return self.laplacian.n_rows


def build_knn_graph(points: np.ndarray, k: int) -> Graph:
    """k-nearest-neighbor graph, symmetrized by union, binary weights.

    Distance ties are broken by lower node index so construction is
    deterministic. Each node ends up with between 1 and 2k edges.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not np.all(np.isfinite(points)):
        raise ContractViolation("build_knn_graph: non-finite coordinates")
    if k < 1 or n <= k:
        raise ContractViolation(f"build_knn_graph: need n > k >= 1, got n={n} k={k}")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.sum(diff ** 2, axis=2))
    pairs = set()
    idx = np.arange(n)
    for i in range(n):
        order = np.lexsort((idx, dist[i]))  # distance, then lower index
        order = order[order != i][:k]
        for j in order:
            pairs.add((min(i, int(j)), max(i, int(j))))
    edges = tuple((i, j, 1.0) for i, j in sorted(pairs))
    return Graph(n, edges)


def build_laplacians(g: Graph, tol: float = 1e-12, seed: int = 0) -> LaplacianSet:
    """Normalized Laplacian plus its scaled and first-order variants.

    Isolated nodes use the convention D^{-1/2}[i,i] = 0, so their
    Laplacian row is the identity row.
    """
    n = g.n_nodes
    d = g.degrees()
    inv_sqrt = np.zeros(n)
    pos = d > 0
    inv_sqrt[pos] = 1.0 / np.sqrt(d[pos])
    rows = list(range(n))
    cols = list(range(n))
    vals = [1.0] * n
    for i, j, w in g.edges:
        a = -w * inv_sqrt[i] * inv_sqrt[j]
        rows += [i, j]
        cols += [j, i]
        vals += [a, a]
    lap = SparseMatrix.from_coo(n, n, rows, cols, vals)
    lam, converged = power_iteration(lap, tol=tol, seed=seed)
    if lam <= 0:
        lam = 1.0  # edgeless graph: L = I, spectrum {1}
    # scaled and first-order share L's sparsity pattern (diagonal included)
    diag_mask = (lap._row_ids == lap.col_indices).astype(np.float64)
    scaled_vals = 2.0 * lap.values / lam - diag_mask
    first_vals = 2.0 * diag_mask - lap.values
    scaled = SparseMatrix(n, n, lap.row_offsets, lap.col_indices, scaled_vals)
    first = SparseMatrix(n, n, lap.row_offsets, lap.col_indices, first_vals)
    return LaplacianSet(lap, scaled, first, float(lam), d, converged)


def save_graph(g: Graph, path):
    with open(path, "w") as fh:
        fh.write(f"{g.n_nodes} {len(g.edges)}\n")
        for i, j, w in g.edges:
            fh.write(f"{i} {j} {w:.17g}\n")


def load_graph(path) -> Graph:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty graph file", line=1)
    head = lines[0].split()
    if len(head) != 2:
        raise ParseError("expected 'N M' header", line=1)
    n, m = int(head[0]), int(head[1])
    if len(lines) < m + 1:
        raise ParseError(f"expected {m} edges, found {len(lines) - 1}", line=len(lines))
    edges = []
    for k in range(m):
        parts = lines[k + 1].split()
        if len(parts) != 3:
            raise ParseError("expected 'i j w'", line=k + 2)
        edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
    return Graph(n, tuple(edges))
