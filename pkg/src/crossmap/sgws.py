"""Spectral graph wavelet signatures (SGWS).

Each vertex ``r`` gets the wavelet coefficients of the unit impulse at ``r``
at ``R`` scales, followed by one scaling-function coefficient. With the
eigenpairs ``(lam_l, u_l)`` of the normalized Laplacian these reduce to
weighted sums of ``u_l(r)**2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from crossmap.errors import DegenerateSimilarityError, ValidationError
from crossmap.graph import SpectralBasis

E_INV = float(np.exp(-1.0))
SIGMA_MODES = ("std", "var")


def mexican_hat(x):
    """Band-pass generating kernel ``x * exp(-x)``; zero at 0, peak 1/e at 1."""
    x = np.asarray(x, dtype=float)
    return x * np.exp(-x)


@dataclass(frozen=True)
class WaveletKernelSpec:
    g: Callable
    h: Callable
    scales: np.ndarray

    @property
    def resolution(self):
        return self.scales.shape[0]

    @property
    def n_columns(self):
        return self.resolution + 1


def default_kernels(lam_max: float, lam_min_nz: float, R: int) -> WaveletKernelSpec:
    """Mexican-hat wavelets plus a quartic-exponential low-pass scaling kernel.

    Scales are ``R`` geometrically spaced values from ``2/lam_min_nz`` down to
    ``2/lam_max``. The scaling kernel is
    ``h(x) = e^-1 * exp(-(x / (0.6 lam_min_nz))**4)`` so that ``h(0)`` equals
    the peak of the wavelet kernel.
    """
    if not (lam_min_nz > 0 and lam_max > 0):
        raise ValidationError("eigenvalue bounds must be positive")
    if not lam_min_nz < lam_max:
        raise ValidationError(f"need lam_min_nz < lam_max, got {lam_min_nz}, {lam_max}")
    if not isinstance(R, (int, np.integer)) or R < 1:
        raise ValidationError(f"resolution R must be a positive integer, got {R!r}")
    scales = np.geomspace(2.0 / lam_min_nz, 2.0 / lam_max, int(R))
    width = 0.6 * lam_min_nz

    def h(x):
        x = np.asarray(x, dtype=float)
        return E_INV * np.exp(-((x / width) ** 4))

    return WaveletKernelSpec(g=mexican_hat, h=h, scales=scales)


def kernels_for_basis(basis: SpectralBasis, R: int, tol: float = 1e-8) -> WaveletKernelSpec:
    """Default kernels fitted to the eigenvalue range carried by ``basis``."""
    lam = basis.eigenvalues
    lam_max = float(lam.max())
    nz = lam[lam > tol * max(lam_max, 1.0)]
    if nz.size == 0:
        raise ValidationError("basis has no nonzero eigenvalue to anchor the wavelet scales")
    lam_min = float(nz.min())
    if lam_min >= lam_max:
        # a single distinct nonzero eigenvalue: open up a one-octave scale range
        lam_max = 2.0 * lam_min
    return default_kernels(lam_max, lam_min, R)


@dataclass(frozen=True)
class SignatureMatrix:
    """``N x (R+1)`` descriptor matrix; last column holds scaling coefficients."""

    S: np.ndarray
    modality: str = "m1"

    @property
    def q(self):
        return self.S.shape[1]

    @property
    def n_samples(self):
        return self.S.shape[0]


def sgws_matrix(basis: SpectralBasis, spec: WaveletKernelSpec, modality: str = "m1") -> SignatureMatrix:
    lam = basis.eigenvalues
    U2 = basis.basis**2
    filt = np.empty((lam.shape[0], spec.n_columns))
    for m, eta in enumerate(spec.scales):
        filt[:, m] = spec.g(eta * lam)
    filt[:, -1] = spec.h(lam)
    return SignatureMatrix(U2 @ filt, modality)


def sgws_distance(a, b) -> float:
    """Sum of squared coordinate differences between two signature rows."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"signature lengths differ: {a.shape[0]} vs {b.shape[0]}")
    return float(np.sum((a - b) ** 2))


@dataclass(frozen=True)
class CrossSimilarity:
    Pi: np.ndarray
    sigma: float


def cross_similarity(S_i, S_j, sigma_mode: str = "std") -> CrossSimilarity:
    """Gaussian similarity between every pair of signature rows.

    ``pi[r, t] = exp(-d[r, t]**2 / (2 sigma**2))`` where ``d`` is
    :func:`sgws_distance` over all ``N_i * N_j`` pairs and ``sigma`` is the
    sample standard deviation of ``d`` (``sigma_mode="std"``) or the sample
    variance (``sigma_mode="var"``). Entries are floored at the smallest positive
    normal double so they stay in ``(0, 1]``.
    """
    A = S_i.S if isinstance(S_i, SignatureMatrix) else np.asarray(S_i, dtype=float)
    B = S_j.S if isinstance(S_j, SignatureMatrix) else np.asarray(S_j, dtype=float)
    if A.shape[1] != B.shape[1]:
        raise ValidationError(f"signature widths differ: {A.shape[1]} vs {B.shape[1]}")
    if sigma_mode not in SIGMA_MODES:
        raise ValidationError(f"sigma_mode must be one of {SIGMA_MODES}, got {sigma_mode!r}")
    d = cdist(A, B, "sqeuclidean")
    var = float(d.var(ddof=1)) if d.size > 1 else 0.0
    sigma = var if sigma_mode == "var" else float(np.sqrt(var))
    if not sigma > 0:
        raise DegenerateSimilarityError("all signature distances are equal; similarity bandwidth is zero")
    Pi = np.exp(-(d**2) / (2.0 * sigma**2))
    Pi = np.maximum(Pi, np.finfo(float).tiny)
    return CrossSimilarity(Pi, sigma)
