"""Functional maps between SGWS descriptors.

For a source modality ``i`` and target modality ``j`` this module finds the
``k_i x k_j`` matrix ``C`` minimizing

    alpha   * ||C^T A_i - A_j||_F^2
  + beta    * sum_k ||Phi_i[k] C - C Phi_j[k]||_F^2
  + lam_b   * sum_{r,t} Pi[r,t] ||(Delta_i C)[r] - Delta_j[t]||^2
  + lam_w   * tr(C^T Delta_i^T L_i Delta_i C)

and turns it into pointwise correspondences by nearest-neighbour search of the
rows of ``Delta_i C`` among the rows of ``Delta_j``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from crossmap.errors import DivergenceError, ValidationError
from crossmap.graph import COMBINATORIAL, NORMALIZED, ModalityGeometry, SpectralBasis, modality_geometry
from crossmap.numkit import NeighborIndex, pinv
from crossmap.sgws import SIGMA_MODES, SignatureMatrix, cross_similarity, kernels_for_basis, sgws_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FmbsdConfig:
    alpha: float = 0.1
    beta: float = 1.0
    lambda_b: float = 1e4
    lambda_w: float = 1e4
    k_basis: int = 60
    resolution: int = 60
    knn: int = 5
    max_iters: int = 500
    grad_tol: float = 1e-6
    sigma_mode: str = "std"
    within_laplacian: str = COMBINATORIAL
    method: str = "cg"

    def __post_init__(self):
        for name in ("alpha", "beta", "lambda_b", "lambda_w"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be a finite nonnegative number, got {v!r}")
        if self.alpha == 0 and self.beta == 0:
            raise ValidationError("at least one of alpha, beta must be positive")
        for name in ("k_basis", "resolution", "knn", "max_iters"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")
        if not self.grad_tol > 0:
            raise ValidationError("grad_tol must be positive")
        if self.within_laplacian not in (COMBINATORIAL, NORMALIZED):
            raise ValidationError("within_laplacian must be combinatorial or normalized")
        if self.sigma_mode not in SIGMA_MODES:
            raise ValidationError(f"sigma_mode must be one of {SIGMA_MODES}, got {self.sigma_mode!r}")
        if self.method not in ("cg", "gd"):
            raise ValidationError(f"method must be 'cg' or 'gd', got {self.method!r}")

    def with_(self, **kw):
        return replace(self, **kw)


# -- descriptor algebra ---------------------------------------------------


@dataclass(frozen=True)
class FourierCoefficients:
    A: np.ndarray


@dataclass(frozen=True)
class DescriptorOperators:
    """Stack of ``q`` matrices of shape ``(k, k)``."""

    ops: np.ndarray

    def __len__(self):
        return self.ops.shape[0]

    def __getitem__(self, i):
        return self.ops[i]


def _basis_array(basis):
    return basis.basis if isinstance(basis, SpectralBasis) else np.asarray(basis, dtype=float)


def _sig_array(S):
    return S.S if isinstance(S, SignatureMatrix) else np.asarray(S, dtype=float)


def project_descriptors(basis, S) -> FourierCoefficients:
    """Spectral coefficients ``A = Delta^T S`` of every descriptor column."""
    D, S = _basis_array(basis), _sig_array(S)
    if D.shape[0] != S.shape[0]:
        raise ValidationError(f"basis has {D.shape[0]} rows but signatures have {S.shape[0]}")
    return FourierCoefficients(D.T @ S)


def descriptor_operators(basis, S) -> DescriptorOperators:
    """Multiplication-by-descriptor operators ``pinv(Delta) diag(s_k) Delta``."""
    D, S = _basis_array(basis), _sig_array(S)
    if D.shape[0] != S.shape[0]:
        raise ValidationError(f"basis has {D.shape[0]} rows but signatures have {S.shape[0]}")
    Dp = pinv(D)
    ops = np.einsum("kn,nq,nl->qkl", Dp, S, D, optimize=True)
    return DescriptorOperators(ops)


@dataclass(frozen=True)
class SimilarityRowSums:
    rows: np.ndarray
    cols: np.ndarray

    @classmethod
    def of(cls, Pi):
        Pi = np.asarray(Pi, dtype=float)
        return cls(Pi.sum(axis=1), Pi.sum(axis=0))


# -- objective and gradient -----------------------------------------------


def _ops(Phi):
    return Phi.ops if isinstance(Phi, DescriptorOperators) else np.asarray(Phi, dtype=float)


def _coeffs(A):
    return A.A if isinstance(A, FourierCoefficients) else np.asarray(A, dtype=float)


class MapProblem:
    """Precomputed quadratic pieces of the map objective for one modality pair.

    Parameters mirror :func:`objective`; the small ``k x k`` products are
    formed once so that each objective/gradient evaluation costs
    ``O(q k_i k_j (k_i + k_j))``.
    """

    def __init__(self, A_i, A_j, Phi_i, Phi_j, Pi, Delta_i, Delta_j, L_i, cfg: FmbsdConfig):
        A_i, A_j = _coeffs(A_i), _coeffs(A_j)
        Phi_i, Phi_j = _ops(Phi_i), _ops(Phi_j)
        Di, Dj = _basis_array(Delta_i), _basis_array(Delta_j)
        Pi = np.asarray(Pi, dtype=float)
        L = L_i.matrix if hasattr(L_i, "matrix") else np.asarray(L_i, dtype=float)
        ki, kj = Di.shape[1], Dj.shape[1]
        Ni, Nj = Di.shape[0], Dj.shape[0]
        q = A_i.shape[1]
        checks = [
            (A_i.shape, (ki, q), "A_i"),
            (A_j.shape, (kj, q), "A_j"),
            (Phi_i.shape, (q, ki, ki), "Phi_i"),
            (Phi_j.shape, (q, kj, kj), "Phi_j"),
            (Pi.shape, (Ni, Nj), "Pi"),
            (L.shape, (Ni, Ni), "L_i"),
        ]
        for got, want, name in checks:
            if tuple(got) != want:
                raise ValidationError(f"{name} has shape {tuple(got)}, expected {want}")
        self.shape = (ki, kj)
        self.cfg = cfg
        self.A_i, self.A_j = A_i, A_j
        self.Phi_i, self.Phi_j = Phi_i, Phi_j
        sums = SimilarityRowSums.of(Pi)
        self.sums = sums
        self.DtDD = Di.T @ (sums.rows[:, None] * Di)
        self.DtPD = Di.T @ Pi @ Dj
        self.const_b = float(np.sum(sums.cols[:, None] * Dj**2))
        self.DtLD = Di.T @ L @ Di
        self.AAt = A_i @ A_i.T
        self.AjAi = A_i @ A_j.T
        self.normAj = float(np.sum(A_j**2))
        # stacked layouts turn the q small products into single GEMMs
        self._Pi_rows = Phi_i.reshape(q * ki, ki)
        self._Pj_cols = Phi_j.transpose(1, 0, 2).reshape(kj, q * kj)
        self._PiT_rows = Phi_i.reshape(q * ki, ki).T
        self._PjT_rows = Phi_j.transpose(0, 2, 1).reshape(q * kj, kj)
        self._grad0 = None

    def _commutators(self, C):
        q = self.Phi_i.shape[0]
        ki, kj = self.shape
        left = (self._Pi_rows @ C).reshape(q, ki, kj)
        right = (C @ self._Pj_cols).reshape(ki, q, kj).transpose(1, 0, 2)
        return left - right

    def terms(self, C):
        C = np.asarray(C, dtype=float)
        cfg = self.cfg
        data = float(np.sum((C.T @ self.A_i - self.A_j) ** 2))
        comm = float(np.sum(self._commutators(C) ** 2))
        between = float(np.sum(C * (self.DtDD @ C)) - 2.0 * np.sum(C * self.DtPD) + self.const_b)
        within = float(np.sum(C * (self.DtLD @ C)))
        return {
            "descriptor": cfg.alpha * data,
            "commutativity": cfg.beta * comm,
            "between": cfg.lambda_b * between,
            "within": cfg.lambda_w * within,
        }

    def objective(self, C):
        return float(sum(self.terms(C).values()))

    def gradient(self, C):
        C = np.asarray(C, dtype=float)
        cfg = self.cfg
        E = self._commutators(C)
        q, ki, kj = E.shape
        # sum_k Phi_i[k]^T E[k] - E[k] Phi_j[k]^T as two stacked products
        comm = (self._PiT_rows @ E.reshape(q * ki, kj)
                - E.transpose(1, 0, 2).reshape(ki, q * kj) @ self._PjT_rows)
        return (
            2.0 * cfg.alpha * (self.AAt @ C - self.AjAi)
            + 2.0 * cfg.beta * comm
            + 2.0 * cfg.lambda_b * (self.DtDD @ C - self.DtPD)
            + 2.0 * cfg.lambda_w * (self.DtLD @ C)
        )

    def hess_vec(self, P):
        """Hessian applied to a direction; exact since the objective is quadratic."""
        if self._grad0 is None:
            self._grad0 = self.gradient(np.zeros(self.shape))
        return self.gradient(P) - self._grad0


def objective(C, A_i, A_j, Phi_i, Phi_j, Pi, Delta_i, Delta_j, L_i, cfg) -> float:
    """Four-term map objective evaluated directly from its matrix form."""
    return MapProblem(A_i, A_j, Phi_i, Phi_j, Pi, Delta_i, Delta_j, L_i, cfg).objective(C)


def gradient(C, A_i, A_j, Phi_i, Phi_j, Pi, Delta_i, Delta_j, L_i, cfg) -> np.ndarray:
    return MapProblem(A_i, A_j, Phi_i, Phi_j, Pi, Delta_i, Delta_j, L_i, cfg).gradient(C)


# -- optimization ---------------------------------------------------------


@dataclass(frozen=True)
class FunctionalMap:
    C: np.ndarray
    source: str
    target: str
    objective: float
    iterations: int
    converged: bool = False
    history: tuple = field(default=(), repr=False)


def rectangular_identity(ki, kj):
    return np.eye(ki, kj)


def minimize_quadratic(problem: MapProblem, C0, max_iters=500, grad_tol=1e-6, method="cg",
                       armijo=1e-4, shrink=0.5, max_backtracks=60):
    """Descent with backtracking line search on the map objective.

    ``method="gd"`` uses steepest descent; ``method="cg"`` uses Polak-Ribiere
    conjugate directions (restarted whenever they stop being descent
    directions). Both start each line search from the step that is exact for a
    quadratic and backtrack until the Armijo condition holds, so accepted
    steps never increase the objective.

    Returns ``(C, history, iterations, converged)``.
    """
    C = np.array(C0, dtype=float, copy=True)
    f = problem.objective(C)
    if not np.isfinite(f):
        raise DivergenceError("objective is not finite at the starting point")
    g = problem.gradient(C)
    history = [f]
    p = -g
    g_prev = None
    it = 0
    converged = False
    while True:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_tol:
            converged = True
            break
        if it >= max_iters:
            break
        if method == "cg" and g_prev is not None:
            beta = max(0.0, float(np.sum(g * (g - g_prev)) / np.sum(g_prev * g_prev)))
            p = -g + beta * p
        else:
            p = -g
        slope = float(np.sum(g * p))
        if slope >= 0:
            p = -g
            slope = -gnorm**2
        curv = float(np.sum(p * problem.hess_vec(p)))
        t = -slope / curv if curv > 0 else 1.0
        predicted = t * slope + 0.5 * t * t * max(curv, 0.0)
        if -predicted <= 1e-14 * max(abs(f), 1.0):
            # no decrease left that double precision can resolve
            break
        for _ in range(max_backtracks):
            C_new = C + t * p
            f_new = problem.objective(C_new)
            if not np.isfinite(f_new):
                raise DivergenceError(f"objective became non-finite at iteration {it}")
            if f_new <= f + armijo * t * slope:
                break
            t *= shrink
        else:
            log.debug("line search stalled at iteration %d", it)
            break
        it += 1
        C, f = C_new, min(f_new, f)
        g_prev, g = g, problem.gradient(C)
        history.append(f)
    return C, history, it, converged


@dataclass(frozen=True)
class ModalityBundle:
    """Everything the map fit needs from one modality."""

    modality: str
    geometry: ModalityGeometry
    signatures: SignatureMatrix
    coefficients: FourierCoefficients
    operators: DescriptorOperators

    @property
    def basis(self):
        return self.geometry.basis

    @property
    def Delta(self):
        return self.geometry.basis.basis


def prepare_modality(X, cfg: FmbsdConfig, modality: str = "m1", kernels=None) -> ModalityBundle:
    """Graph, spectral basis, signatures and descriptor algebra for one modality.

    ``kernels`` defaults to wavelets fitted to this modality's own spectrum;
    pass a shared spec (see :func:`prepare_modalities`) when signatures of
    several modalities are to be compared.
    """
    geom = X if isinstance(X, ModalityGeometry) else modality_geometry(X, knn=cfg.knn, k_basis=cfg.k_basis)
    spec = kernels if kernels is not None else kernels_for_basis(geom.basis, cfg.resolution)
    S = sgws_matrix(geom.basis, spec, modality)
    return ModalityBundle(
        modality,
        geom,
        S,
        project_descriptors(geom.basis, S),
        descriptor_operators(geom.basis, S),
    )


def prepare_modalities(features, cfg: FmbsdConfig, names=None) -> list:
    """Bundles for several modalities sharing one wavelet kernel spec.

    The scales span the union of the modalities' computed eigenvalue ranges,
    so column ``m`` of every signature matrix uses the same wavelet.
    """
    names = list(names) if names is not None else [f"m{i + 1}" for i in range(len(features))]
    geoms = [modality_geometry(X, knn=cfg.knn, k_basis=cfg.k_basis) for X in features]
    lam = np.concatenate([g.basis.eigenvalues for g in geoms])
    spec = kernels_for_basis(SpectralBasis(lam, np.zeros((1, lam.size))), cfg.resolution)
    return [prepare_modality(g, cfg, n, spec) for g, n in zip(geoms, names)]


def map_problem(src: ModalityBundle, dst: ModalityBundle, cfg: FmbsdConfig, Pi=None) -> MapProblem:
    if Pi is None:
        Pi = cross_similarity(src.signatures, dst.signatures, cfg.sigma_mode).Pi
    L = src.geometry.combinatorial if cfg.within_laplacian == COMBINATORIAL else src.geometry.normalized
    return MapProblem(
        src.coefficients, dst.coefficients, src.operators, dst.operators,
        Pi, src.Delta, dst.Delta, L, cfg,
    )


def fit_map(src: ModalityBundle, dst: ModalityBundle, cfg: FmbsdConfig = FmbsdConfig(), Pi=None) -> FunctionalMap:
    """Minimize the map objective from the rectangular identity."""
    prob = map_problem(src, dst, cfg, Pi)
    C0 = rectangular_identity(*prob.shape)
    C, hist, iters, ok = minimize_quadratic(prob, C0, cfg.max_iters, cfg.grad_tol, cfg.method)
    log.info("map %s->%s: objective %.6g -> %.6g in %d iterations", src.modality, dst.modality,
             hist[0], hist[-1], iters)
    return FunctionalMap(C, src.modality, dst.modality, prob.objective(C), iters, ok, tuple(hist))


# -- correspondences and retrieval ---------------------------------------


@dataclass(frozen=True)
class CorrespondenceMatrix:
    """Zero-based assignment ``rho`` of each source row to one target row."""

    rho: np.ndarray
    n_target: int

    @property
    def P(self):
        n = self.rho.shape[0]
        return sparse.csr_matrix((np.ones(n), (np.arange(n), self.rho)), shape=(n, self.n_target))

    def accuracy(self, truth):
        return float(np.mean(self.rho == np.asarray(truth)))


def extract_correspondences(Delta_i, C, Delta_j) -> CorrespondenceMatrix:
    Di, Dj = _basis_array(Delta_i), _basis_array(Delta_j)
    C = np.asarray(C, dtype=float)
    if Di.shape[1] != C.shape[0] or C.shape[1] != Dj.shape[1]:
        raise ValidationError(f"shapes {Di.shape}, {C.shape}, {Dj.shape} are not conformable")
    idx = NeighborIndex(Dj)
    rho = idx.query_many(Di @ C, 1)[:, 0]
    return CorrespondenceMatrix(rho, Dj.shape[0])


def retrieve(Delta_i, C, Delta_j, r: int, k_ret: int, index: NeighborIndex | None = None) -> np.ndarray:
    """Indices of the ``k_ret`` target rows nearest to mapped source row ``r``."""
    Di, Dj = _basis_array(Delta_i), _basis_array(Delta_j)
    if not 1 <= k_ret <= Dj.shape[0]:
        raise ValidationError(f"k_ret must be in [1, {Dj.shape[0]}], got {k_ret}")
    if not 0 <= r < Di.shape[0]:
        raise ValidationError(f"query row {r} out of range")
    index = index or NeighborIndex(Dj)
    return index.query(Di[r] @ np.asarray(C, dtype=float), k_ret)


def retrieve_all(Delta_i, C, Delta_j, k_ret: int) -> np.ndarray:
    Di, Dj = _basis_array(Delta_i), _basis_array(Delta_j)
    if not 1 <= k_ret <= Dj.shape[0]:
        raise ValidationError(f"k_ret must be in [1, {Dj.shape[0]}], got {k_ret}")
    return NeighborIndex(Dj).query_many(Di @ np.asarray(C, dtype=float), k_ret)
