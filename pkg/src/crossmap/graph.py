"""Per-modality neighbourhood graphs, Laplacians and truncated spectral bases."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from crossmap.errors import DegenerateGraphError, ValidationError
from crossmap.numkit import as_matrix, sym_eig_smallest

NORMALIZED = "normalized"
COMBINATORIAL = "combinatorial"
FLAVORS = (NORMALIZED, COMBINATORIAL)


@dataclass(frozen=True)
class FeatureMatrix:
    """Samples of one modality, one per row."""

    data: np.ndarray
    modality: str = "m1"

    def __post_init__(self):
        X = as_matrix(self.data, f"features of {self.modality}")
        if X.shape[0] < 2 or X.shape[1] < 1:
            raise ValidationError(
                f"modality {self.modality} needs >= 2 samples and >= 1 feature, got {X.shape}"
            )
        object.__setattr__(self, "data", X)

    @property
    def n_samples(self):
        return self.data.shape[0]

    @property
    def n_features(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class NeighborGraph:
    weights: np.ndarray
    k: int
    sigma: float


@dataclass(frozen=True)
class Laplacian:
    matrix: np.ndarray
    flavor: str
    degrees: np.ndarray


@dataclass(frozen=True)
class SpectralBasis:
    eigenvalues: np.ndarray
    basis: np.ndarray
    flavor: str = NORMALIZED

    @property
    def k(self):
        return self.basis.shape[1]

    @property
    def n_samples(self):
        return self.basis.shape[0]


def knn_sets(X, k):
    """Indices of the ``k`` nearest other rows for each row, plus distances.

    Ties are resolved towards the lower index.
    """
    D = cdist(X, X)
    np.fill_diagonal(D, np.inf)
    nbrs = np.argsort(D, axis=1, kind="stable")[:, :k]
    return nbrs, np.take_along_axis(D, nbrs, axis=1)


def build_knn_graph(X, k: int = 5) -> NeighborGraph:
    """Gaussian-weighted, or-symmetrized k-nearest-neighbour graph.

    ``w[r, t] = exp(-|x_r - x_t|^2 / (2 sigma^2))`` whenever either point is
    among the other's ``k`` nearest neighbours. ``sigma`` is the mean, over
    all samples, of the Euclidean distance to each of their ``k`` neighbours.

    Parameters
    ----------
    X : FeatureMatrix or array_like, shape (N, d)
    k : int
        Neighbour count, ``1 <= k < N``.
    """
    if isinstance(X, FeatureMatrix):
        X = X.data
    X = as_matrix(X, "X")
    n = X.shape[0]
    if not isinstance(k, (int, np.integer)) or not 1 <= k < n:
        raise ValidationError(f"k must satisfy 1 <= k < N={n}, got {k!r}")
    nbrs, dist = knn_sets(X, k)
    sigma = float(dist.mean())

    mask = np.zeros((n, n), dtype=bool)
    mask[np.repeat(np.arange(n), k), nbrs.ravel()] = True
    mask |= mask.T
    np.fill_diagonal(mask, False)

    sq = cdist(X, X, "sqeuclidean")
    if sigma > 0:
        kernel = np.exp(-sq / (2.0 * sigma**2))
    else:
        # every neighbour sits at distance zero
        kernel = (sq == 0).astype(float)
    W = np.where(mask, kernel, 0.0)
    W = 0.5 * (W + W.T)
    return NeighborGraph(weights=W, k=int(k), sigma=sigma)


def laplacian(G, flavor: str = NORMALIZED) -> Laplacian:
    """Combinatorial ``D - W`` or symmetric normalized Laplacian of a graph.

    Isolated vertices are rejected: the normalized form needs ``D^{-1/2}``.
    """
    W = G.weights if isinstance(G, NeighborGraph) else as_matrix(G, "W")
    if flavor not in FLAVORS:
        raise ValidationError(f"unknown Laplacian flavor {flavor!r}")
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        bad = np.flatnonzero(deg <= 0)
        raise DegenerateGraphError(f"graph has isolated vertices: {bad[:10].tolist()}")
    L = np.diag(deg) - W
    if flavor == NORMALIZED:
        s = 1.0 / np.sqrt(deg)
        L = s[:, None] * L * s[None, :]
    L = 0.5 * (L + L.T)
    return Laplacian(matrix=L, flavor=flavor, degrees=deg)


def spectral_basis(L: Laplacian, k: int) -> SpectralBasis:
    """The ``k`` lowest-frequency eigenvectors of ``L`` as columns."""
    pairs = sym_eig_smallest(L.matrix, k)
    return SpectralBasis(eigenvalues=pairs.eigenvalues, basis=pairs.eigenvectors, flavor=L.flavor)


@dataclass(frozen=True)
class ModalityGeometry:
    """Graph, both Laplacian flavours and the normalized spectral basis."""

    graph: NeighborGraph
    normalized: Laplacian
    combinatorial: Laplacian
    basis: SpectralBasis = field(repr=False)


def modality_geometry(X, knn: int = 5, k_basis: int = 60) -> ModalityGeometry:
    G = build_knn_graph(X, knn)
    Ln = laplacian(G, NORMALIZED)
    Lc = laplacian(G, COMBINATORIAL)
    n = Ln.matrix.shape[0]
    return ModalityGeometry(G, Ln, Lc, spectral_basis(Ln, min(k_basis, n)))
