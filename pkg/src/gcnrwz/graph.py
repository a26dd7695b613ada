"""Road-network graph construction and the spectral operators derived from it.

The training path only ever touches the renormalized adjacency and the
scaled Laplacian; full eigendecompositions live here too but solely as
test oracles (they are too expensive to sit on the forward path).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import dijkstra

# Gaussian kernel weights below this are hard-zeroed to keep A sparse.
WEIGHT_THRESHOLD = 0.1
# Used when fewer than two distinct edge distances exist (std degenerate).
SIGMA_FALLBACK = 1.0


@dataclass(frozen=True)
class RoadGraph:
    """Undirected weighted road network.

    ``segment_ids`` fixes the node index order for every downstream tensor.
    ``adjacency`` holds the kernel weights; ``distances`` the raw edge miles
    (``inf`` off the edge set, 0 on the diagonal).
    """
    segment_ids: tuple
    adjacency: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        a = self.adjacency
        if a.shape != (self.n, self.n):
            raise ValueError(f"adjacency shape {a.shape} != ({self.n}, {self.n})")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("adjacency entries must be finite and >= 0")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if len(set(self.segment_ids)) != self.n:
            raise ValueError("segment ids must be unique")
        a.setflags(write=False)
        self.distances.setflags(write=False)

    @property
    def n(self):
        return len(self.segment_ids)

    def index_of(self, segment_id):
        try:
            return self.segment_ids.index(segment_id)
        except ValueError:
            raise KeyError(f"unknown segment id: {segment_id!r}") from None

    def shortest_path_miles(self):
        """All-pairs shortest-path distances over edge miles."""
        return dijkstra(self.distances, directed=False)


@dataclass(frozen=True)
class SpectralOperators:
    normalized_adjacency: np.ndarray
    scaled_laplacian: np.ndarray
    lambda_max: float


@dataclass(frozen=True)
class SpectralDecomposition:
    """Full eigendecomposition of a Laplacian. Test oracle only."""
    eigenvectors: np.ndarray
    eigenvalues: np.ndarray


def build_graph(edges, segment_ids=None, adjacency_mode="gaussian"):
    """Build a RoadGraph from ``(src_id, dst_id, distance_miles)`` triples.

    Weights follow a Gaussian distance kernel exp(-(d/sigma)^2) with sigma
    the std of the observed edge distances, hard-thresholded at 0.1;
    ``adjacency_mode="binary"`` stores 1 per edge instead (ablation).
    Order-insensitive: permuting the edge list yields an identical graph.
    """
    if adjacency_mode not in ("gaussian", "binary"):
        raise ValueError(f"unknown adjacency mode: {adjacency_mode!r}")

    dedup = {}
    for src, dst, dist in edges:
        if not src or not dst:
            raise ValueError(f"empty segment id in edge ({src!r}, {dst!r})")
        if src == dst:
            raise ValueError(f"self-loop on segment {src!r}")
        dist = float(dist)
        if dist <= 0:
            raise ValueError(f"edge ({src!r}, {dst!r}) has non-positive distance {dist}")
        key = (src, dst) if src <= dst else (dst, src)
        if key in dedup and dedup[key] != dist:
            raise ValueError(f"conflicting distances for edge {key}: "
                             f"{dedup[key]} vs {dist}")
        dedup[key] = dist

    if segment_ids is None:
        ids = sorted({s for pair in dedup for s in pair})
    else:
        ids = list(segment_ids)
        if len(set(ids)) != len(ids):
            raise ValueError("declared segment ids contain duplicates")
        known = set(ids)
        for key in dedup:
            for s in key:
                if s not in known:
                    raise ValueError(f"edge references undeclared segment id: {s!r}")
    if not ids:
        raise ValueError("graph has no segments")

    n = len(ids)
    index = {s: i for i, s in enumerate(ids)}
    adjacency = np.zeros((n, n))
    distances = np.full((n, n), np.inf)
    np.fill_diagonal(distances, 0.0)

    dists = np.array(sorted(dedup.values()))
    if len(np.unique(dists)) >= 2:
        sigma = float(np.std(dists))
    else:
        sigma = SIGMA_FALLBACK

    for (src, dst), dist in dedup.items():
        i, j = index[src], index[dst]
        if adjacency_mode == "binary":
            w = 1.0
        else:
            w = float(np.exp(-((dist / sigma) ** 2)))
            if w < WEIGHT_THRESHOLD:
                w = 0.0
        adjacency[i, j] = adjacency[j, i] = w
        distances[i, j] = distances[j, i] = dist

    return RoadGraph(tuple(ids), adjacency, distances)


def normalized_adjacency(g):
    """Self-loop renormalized operator D~^{-1/2} (A + I) D~^{-1/2}."""
    a_tilde = g.adjacency + np.eye(g.n)
    d_inv = 1.0 / a_tilde.sum(axis=1)
    # sqrt of the (exactly symmetric) outer product: bitwise symmetric and
    # one rounding step tighter than multiplying two rounded square roots
    return np.sqrt(d_inv[:, None] * d_inv[None, :]) * a_tilde


def laplacian(g):
    """Combinatorial Laplacian L = D - A."""
    return np.diag(g.adjacency.sum(axis=1)) - g.adjacency


def power_iteration_lambda_max(mat, tol=1e-9, max_iters=10000):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    n = mat.shape[0]
    v = np.ones(n) + 0.01 * np.arange(n) / max(n, 1)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return 0.0  # zero matrix (edgeless graph)
        v_next = w / norm
        lam = float(v_next @ (mat @ v_next))
        residual = np.linalg.norm(mat @ v_next - lam * v_next)
        v = v_next
        if residual <= tol * max(1.0, abs(lam)):
            return lam
    raise RuntimeError(f"power iteration did not converge after {max_iters} "
                       f"iterations (residual {residual:.3e})")


def _resolve_lambda_max(lap, lambda_max):
    if lambda_max == "auto":
        lam = power_iteration_lambda_max(lap)
        if lam <= 1e-12:
            lam = 2.0  # L = 0: any positive value gives L_hat = -I
        return lam
    lam = float(lambda_max)
    if lam <= 0:
        raise ValueError(f"lambda_max must be positive, got {lam}")
    return lam


def scaled_laplacian(g, lambda_max="auto"):
    """L_hat = 2 L / lambda_max - I, spectrum inside [-1, 1]."""
    lap = laplacian(g)
    lam = _resolve_lambda_max(lap, lambda_max)
    return 2.0 * lap / lam - np.eye(g.n)


def spectral_operators(g, lambda_max="auto"):
    lap = laplacian(g)
    lam = _resolve_lambda_max(lap, lambda_max)
    lap_hat = 2.0 * lap / lam - np.eye(g.n)
    return SpectralOperators(normalized_adjacency(g), lap_hat, lam)


def chebyshev_apply(l_hat, order, x):
    """[T_0(L_hat) x, ..., T_K(L_hat) x] via the three-term recurrence."""
    l_hat = np.asarray(l_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if l_hat.ndim != 2 or l_hat.shape[0] != l_hat.shape[1]:
        raise ValueError(f"operator must be square, got shape {l_hat.shape}")
    if x.shape[0] != l_hat.shape[0]:
        raise ValueError(f"dimension mismatch: operator {l_hat.shape} vs signal {x.shape}")
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    terms = [x.copy()]
    if order >= 1:
        terms.append(l_hat @ x)
    for _ in range(2, order + 1):
        terms.append(2.0 * (l_hat @ terms[-1]) - terms[-2])
    return terms


def spectral_decomposition(lap):
    lap = np.asarray(lap, dtype=np.float64)
    if not np.allclose(lap, lap.T, atol=1e-10):
        raise ValueError("matrix is not symmetric")
    eigenvalues, eigenvectors = np.linalg.eigh(lap)
    return SpectralDecomposition(eigenvectors, eigenvalues)


def spectral_conv_oracle(lap, g_theta, x):
    """Eigendecomposition-based graph convolution U diag(g_theta) U^T x.

    Correctness oracle for the Chebyshev / layer-wise linear fast paths;
    restricted to test scale (N <= 16) and never used in training.
    """
    lap = np.asarray(lap, dtype=np.float64)
    if lap.shape[0] > 16:
        raise ValueError(f"oracle is test-scale only (N <= 16), got N = {lap.shape[0]}")
    dec = spectral_decomposition(lap)
    u = dec.eigenvectors
    return u @ (np.asarray(g_theta) * (u.T @ np.asarray(x, dtype=np.float64)))
