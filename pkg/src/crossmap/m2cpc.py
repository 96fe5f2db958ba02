"""Manifold-regularized multimodal multiclass classification.

A vector-valued kernel model is fit jointly over ``m`` modalities. Labels are
encoded as ``+1/-1`` vectors of length ``c`` (zeros for unlabeled samples);
the coefficient vector solves one dense linear system

    (J G + 2 l gamma_a I + gamma_w sym(M_W) G + gamma_b sym(M_B) G) a = y

where ``G = K (x) I_c`` is the block Gram matrix, ``M_W = L (x) I_c`` holds the
within-modality graph Laplacians and ``M_B = M_P (x) I_c`` ties samples to
their cross-modal correspondences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from crossmap.errors import ValidationError
from crossmap.numkit import as_matrix, solve

UNLABELED = 0
LAPLACIAN_EXACT = "laplacian-exact"
IDENTITY_DIAGONAL = "identity-diagonal"
MP_MODES = (LAPLACIAN_EXACT, IDENTITY_DIAGONAL)


# -- labels ---------------------------------------------------------------


@dataclass(frozen=True)
class LabelEncoding:
    """Stacked ``+1/-1`` label blocks with labeled samples first per modality.

    ``orders[i][p]`` is the original row of modality ``i`` placed at
    position ``p``.
    """

    y: np.ndarray
    blocks: tuple
    n_classes: int
    n_labeled: tuple
    n_samples: tuple
    orders: tuple

    @property
    def l(self):
        return int(sum(self.n_labeled))


def encode_one(label, c):
    """Code vector for a 1-based class label; 0 encodes 'unlabeled'."""
    v = np.zeros(c)
    if label != UNLABELED:
        v -= 1.0
        v[label - 1] = 1.0
    return v


def encode_labels(labels, c: int) -> LabelEncoding:
    """Encode per-modality label vectors (1..c, 0 for unlabeled).

    Samples are stably reordered so that labeled ones come first.
    """
    if not isinstance(c, (int, np.integer)) or c < 2:
        raise ValidationError(f"class count must be >= 2, got {c!r}")
    blocks, n_lab, n_tot, orders = [], [], [], []
    for i, lab in enumerate(labels):
        lab = np.asarray(lab)
        if lab.ndim != 1 or not np.issubdtype(lab.dtype, np.integer):
            raise ValidationError(f"labels of modality {i} must be a 1-D integer vector")
        bad = (lab < 0) | (lab > c)
        if np.any(bad):
            r = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"modality {i} row {r}: label {lab[r]} outside 1..{c}")
        order = np.argsort(lab == UNLABELED, kind="stable")
        Y = np.stack([encode_one(v, c) for v in lab[order]]) if lab.size else np.zeros((0, c))
        blocks.append(Y.ravel())
        n_lab.append(int(np.sum(lab != UNLABELED)))
        n_tot.append(int(lab.size))
        orders.append(order)
    return LabelEncoding(np.concatenate(blocks), tuple(blocks), int(c), tuple(n_lab), tuple(n_tot), tuple(orders))


def build_J(n_labeled, n_samples, c: int) -> np.ndarray:
    """Diagonal 0/1 mask selecting the first ``l_i`` samples of each modality."""
    diag = []
    for l_i, N_i in zip(n_labeled, n_samples):
        if not 0 <= l_i <= N_i:
            raise ValidationError(f"labeled count {l_i} exceeds sample count {N_i}")
        d = np.zeros(N_i * c)
        d[: l_i * c] = 1.0
        diag.append(d)
    return np.diag(np.concatenate(diag)) if diag else np.zeros((0, 0))


# -- regularizers ---------------------------------------------------------


def _offsets(n_samples):
    return np.concatenate([[0], np.cumsum(n_samples)]).astype(int)


def _rho_of(P, shape):
    """Assignment vector from a dense/sparse 0/1 matrix or an index vector."""
    if hasattr(P, "toarray"):
        P = P.toarray()
    P = np.asarray(P)
    if P.ndim == 1:
        rho = P.astype(int)
        if rho.shape[0] != shape[0] or np.any(rho < 0) or np.any(rho >= shape[1]):
            raise ValidationError(f"correspondence vector incompatible with shape {shape}")
        return rho
    if P.shape != shape:
        raise ValidationError(f"correspondence matrix has shape {P.shape}, expected {shape}")
    if not np.all(P.sum(axis=1) == 1):
        raise ValidationError("each correspondence row must hold exactly one 1")
    return np.argmax(P, axis=1)


def build_MP(correspondences: dict, n_samples, mode: str = LAPLACIAN_EXACT) -> np.ndarray:
    """Between-modality operator from pointwise correspondences.

    Parameters
    ----------
    correspondences : dict
        Maps ``(j, k)`` with ``j < k`` (0-based modality indices) to either a
        0/1 matrix of shape ``(N_j, N_k)`` or an assignment vector ``rho``.
    n_samples : sequence of int
    mode : {"laplacian-exact", "identity-diagonal"}
        ``laplacian-exact`` sums the Laplacians of the bipartite matching
        graphs, so ``f @ M_P @ f`` equals
        ``sum_{j<k} sum_i (f_j[i] - f_k[rho_jk[i]])**2`` for any assignment.
        ``identity-diagonal`` puts ``(m - 1) I`` on the diagonal blocks, which
        agrees with the sum only for bijective assignments.
    """
    if mode not in MP_MODES:
        raise ValidationError(f"mode must be one of {MP_MODES}, got {mode!r}")
    n_samples = list(n_samples)
    m = len(n_samples)
    off = _offsets(n_samples)
    N = int(off[-1])
    M = np.zeros((N, N))
    for (j, k), P in correspondences.items():
        if not (0 <= j < k < m):
            raise ValidationError(f"correspondence key {(j, k)} must satisfy 0 <= j < k < {m}")
        rho = _rho_of(P, (n_samples[j], n_samples[k]))
        rows = off[j] + np.arange(n_samples[j])
        cols = off[k] + rho
        np.add.at(M, (rows, cols), -1.0)
        np.add.at(M, (cols, rows), -1.0)
        if mode == LAPLACIAN_EXACT:
            np.add.at(M, (rows, rows), 1.0)
            np.add.at(M, (cols, cols), 1.0)
    if mode == IDENTITY_DIAGONAL:
        M[np.diag_indices(N)] += m - 1
    return M


def block_diag_laplacian(laplacians) -> np.ndarray:
    mats = [L.matrix if hasattr(L, "matrix") else as_matrix(L, "Laplacian") for L in laplacians]
    return linalg.block_diag(*mats) if mats else np.zeros((0, 0))


def build_MW(laplacians, c: int) -> np.ndarray:
    """``L (x) I_c`` with ``L`` the block diagonal of per-modality Laplacians."""
    return np.kron(block_diag_laplacian(laplacians), np.eye(c))


def lift(M, c: int) -> np.ndarray:
    return np.kron(M, np.eye(c))


# -- kernels --------------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernels ``exp(-|x - y|^2 / (2 w_i^2))`` with one width per modality."""

    widths: tuple

    def __post_init__(self):
        for w in self.widths:
            if not (np.isfinite(w) and w > 0):
                raise ValidationError(f"kernel width must be positive, got {w!r}")

    @classmethod
    def median_heuristic(cls, features):
        widths = []
        for X in features:
            d = cdist(X, X)
            widths.append(float(np.median(d[np.triu_indices_from(d, 1)])) or 1.0)
        return cls(tuple(widths))


def gaussian_kernel(X, Y, width: float) -> np.ndarray:
    if not (np.isfinite(width) and width > 0):
        raise ValidationError(f"kernel width must be positive, got {width!r}")
    return np.exp(-cdist(X, Y, "sqeuclidean") / (2.0 * width**2))


def gram(features, spec: KernelSpec, c: int) -> np.ndarray:
    """Block Gram matrix ``G = blockdiag(K_1, ..., K_m) (x) I_c``."""
    if len(spec.widths) != len(features):
        raise ValidationError(f"{len(spec.widths)} kernel widths for {len(features)} modalities")
    K = linalg.block_diag(*[gaussian_kernel(X, X, w) for X, w in zip(features, spec.widths)])
    return np.kron(K, np.eye(c))


# -- fit / predict --------------------------------------------------------


@dataclass(frozen=True)
class TrainedModel:
    a: np.ndarray
    features: tuple
    kernel: KernelSpec
    gamma_a: float
    gamma_w: float
    gamma_b: float
    n_classes: int
    residual: float = 0.0
    orders: tuple = field(default=(), repr=False)

    def coefficients(self, i):
        """Coefficient block of modality ``i`` as an ``(N_i, c)`` array."""
        sizes = [X.shape[0] for X in self.features]
        off = _offsets(sizes) * self.n_classes
        return self.a[off[i]: off[i + 1]].reshape(-1, self.n_classes)


def assemble_B(J, G, M_W, M_B, l, gamma_a, gamma_w, gamma_b):
    n = G.shape[0]
    B = J @ G + 2.0 * l * gamma_a * np.eye(n)
    if gamma_w:
        B += gamma_w * 0.5 * (M_W.T + M_W) @ G
    if gamma_b:
        B += gamma_b * 0.5 * (M_B.T + M_B) @ G
    return B


def fit(encoding: LabelEncoding, J, G, M_W, M_B, gamma_a, gamma_w, gamma_b, features=(), kernel=None) -> TrainedModel:
    """Solve for the coefficient vector of all modalities at once.

    ``features`` must already be in the encoding's labeled-first order; they
    are stored on the model for prediction.
    """
    n = encoding.y.shape[0]
    for name, M in (("J", J), ("G", G), ("M_W", M_W), ("M_B", M_B)):
        if M.shape != (n, n):
            raise ValidationError(f"{name} has shape {M.shape}, expected {(n, n)}")
    if gamma_a < 0 or gamma_w < 0 or gamma_b < 0:
        raise ValidationError("regularization weights must be nonnegative")
    B = assemble_B(J, G, M_W, M_B, encoding.l, gamma_a, gamma_w, gamma_b)
    a = solve(B, encoding.y)
    ynorm = float(np.linalg.norm(encoding.y))
    res = float(np.linalg.norm(B @ a - encoding.y)) / (ynorm if ynorm > 0 else 1.0)
    return TrainedModel(a, tuple(features), kernel, gamma_a, gamma_w, gamma_b,
                        encoding.n_classes, res, encoding.orders)


def decide(scores) -> np.ndarray:
    """1-based class of each row of a score array; ties go to the lower class."""
    return np.argmax(np.asarray(scores), axis=1) + 1


def predict(model: TrainedModel, V, i: int):
    """Scores ``K~ (x) I_c`` times the modality's coefficients, and argmax labels.

    Returns ``(labels, scores)`` with scores of shape ``(n_test, c)``.
    """
    X = model.features[i]
    V = as_matrix(V, "test features")
    if V.shape[1] != X.shape[1]:
        raise ValidationError(f"test features have {V.shape[1]} columns, modality {i} has {X.shape[1]}")
    Kt = gaussian_kernel(V, X, model.kernel.widths[i])
    # (K~ (x) I_c) a_i without forming the Kronecker product
    scores = Kt @ model.coefficients(i)
    return decide(scores), scores


# -- estimator ------------------------------------------------------------


class M2CPC:
    """Fit/predict wrapper that works in the callers' original row order.

    Parameters
    ----------
    gamma_a, gamma_w, gamma_b : float
        Ambient, within-modality and between-modality weights.
    kernel_width : float, sequence of float or None
        Gaussian widths; ``None`` uses the median pairwise distance per modality.
    mp_mode : str
        See :func:`build_MP`.
    """

    def __init__(self, gamma_a=1e-3, gamma_w=1e-3, gamma_b=1e-3, kernel_width=None, mp_mode=LAPLACIAN_EXACT):
        self.gamma_a = gamma_a
        self.gamma_w = gamma_w
        self.gamma_b = gamma_b
        self.kernel_width = kernel_width
        self.mp_mode = mp_mode

    def _kernel(self, features):
        w = self.kernel_width
        if w is None:
            return KernelSpec.median_heuristic(features)
        if np.isscalar(w):
            return KernelSpec(tuple(float(w) for _ in features))
        return KernelSpec(tuple(float(v) for v in w))

    def fit(self, features, labels, n_classes, laplacians=None, correspondences=None):
        """Fit on per-modality features and labels (0 = unlabeled).

        ``laplacians`` are per-modality combinatorial Laplacians (matrices or
        :class:`~crossmap.graph.Laplacian`), required when ``gamma_w > 0``.
        ``correspondences`` maps ``(j, k)`` to assignment vectors or 0/1
        matrices in original row order.
        """
        features = [as_matrix(X, f"features[{i}]") for i, X in enumerate(features)]
        enc = encode_labels(labels, n_classes)
        c = enc.n_classes
        orders = enc.orders
        Xs = [X[o] for X, o in zip(features, orders)]
        sizes = [X.shape[0] for X in Xs]
        self.kernel_ = self._kernel(features)
        G = gram(Xs, self.kernel_, c)
        J = build_J(enc.n_labeled, enc.n_samples, c)

        n = G.shape[0]
        if laplacians is not None:
            Ls = [(L.matrix if hasattr(L, "matrix") else np.asarray(L))[np.ix_(o, o)] for L, o in zip(laplacians, orders)]
            M_W = build_MW(Ls, c)
        elif self.gamma_w:
            raise ValidationError("gamma_w > 0 needs per-modality Laplacians")
        else:
            M_W = np.zeros((n, n))

        if correspondences:
            inv = [np.argsort(o) for o in orders]
            moved = {}
            for (j, k), P in correspondences.items():
                rho = _rho_of(P, (len(orders[j]), len(orders[k])))
                # position p in j holds original row orders[j][p]
                moved[(j, k)] = inv[k][rho[orders[j]]]
            M_B = lift(build_MP(moved, sizes, self.mp_mode), c)
        else:
            M_B = np.zeros((n, n))

        self.encoding_ = enc
        self.model_ = fit(enc, J, G, M_W, M_B, self.gamma_a, self.gamma_w, self.gamma_b, Xs, self.kernel_)
        return self

    def predict(self, V, i=0):
        return predict(self.model_, V, i)[0]

    def decision_function(self, V, i=0):
        return predict(self.model_, V, i)[1]
