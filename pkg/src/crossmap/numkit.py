"""Dense numerical kernel: symmetric eigensolver, pseudoinverse, linear solve
and an exact nearest-neighbour index.

Everything here works on plain ``numpy`` arrays and returns fresh arrays; no
function mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.linalg import lapack
from scipy.spatial import cKDTree

from crossmap.errors import SingularSystemError, SymmetryError, ValidationError

SYMMETRY_TOL = 1e-10
PINV_RCOND = 1e-12
RCOND_MIN = 1e-14


def as_matrix(M, name="matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-D float array or raise ValidationError."""
    A = np.asarray(M, dtype=float)
    if A.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} contains non-finite entries")
    return A


def fix_signs(U: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry of each is positive.

    Ties in magnitude go to the lowest row index (``argmax`` semantics).
    """
    U = np.array(U, dtype=float, copy=True)
    if U.size == 0:
        return U
    rows = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[rows, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


@dataclass(frozen=True)
class EigenPairs:
    """Ascending eigenvalues with matching, sign-fixed eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __len__(self):
        return self.eigenvalues.shape[0]


def sym_eig_smallest(M, k: int) -> EigenPairs:
    """The ``k`` smallest eigenpairs of a symmetric matrix.

    Parameters
    ----------
    M : array_like, shape (n, n)
        Symmetric to within ``1e-10`` (relative to its largest entry).
    k : int
        Number of eigenpairs, ``1 <= k <= n``.

    Returns
    -------
    EigenPairs
        Eigenvalues ascending; column ``l`` of ``eigenvectors`` pairs with
        eigenvalue ``l`` and has its largest-magnitude entry positive.
    """
    A = as_matrix(M, "M")
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValidationError(f"M must be square, got shape {A.shape}")
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= n:
        raise ValidationError(f"k must be an integer in [1, {n}], got {k!r}")
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.T)) > SYMMETRY_TOL * scale:
        raise SymmetryError("M is not symmetric")
    A = 0.5 * (A + A.T)
    w, U = linalg.eigh(A, subset_by_index=[0, k - 1], driver="evr")
    order = np.argsort(w, kind="stable")
    return EigenPairs(w[order], fix_signs(U[:, order]))


def pinv(M) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below ``1e-12 * sigma_max`` are treated as zero.
    """
    A = as_matrix(M, "M")
    if A.size == 0:
        return np.zeros(A.shape[::-1])
    U, s, Vt = linalg.svd(A, full_matrices=False)
    cutoff = PINV_RCOND * (s[0] if s.size else 0.0)
    inv = np.zeros_like(s)
    keep = s > cutoff
    inv[keep] = 1.0 / s[keep]
    return (Vt.T * inv) @ U.T


def solve(A, y) -> np.ndarray:
    """Solve ``A x = y`` by LU factorization.

    Raises SingularSystemError when the reciprocal 1-norm condition estimate
    falls below ``1e-14``.
    """
    A = as_matrix(A, "A")
    y = np.asarray(y, dtype=float)
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValidationError(f"A must be square, got shape {A.shape}")
    if y.shape[0] != n:
        raise ValidationError(f"y has {y.shape[0]} rows, A has {n}")
    if not np.all(np.isfinite(y)):
        raise ValidationError("y contains non-finite entries")
    anorm = np.linalg.norm(A, 1)
    lu, piv, info = lapack.dgetrf(A)
    if info > 0 or anorm == 0.0:
        raise SingularSystemError("matrix is exactly singular")
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    if not rcond >= RCOND_MIN:
        raise SingularSystemError(f"matrix is ill-conditioned (rcond={rcond:.3e})")
    x, info = lapack.dgetrs(lu, piv, y)
    return x


class NeighborIndex:
    """Exact Euclidean nearest-neighbour search over the rows of a matrix.

    Backed by a k-d tree; candidate sets are re-ranked on exact distances with
    ties broken by the lowest row index, so results match an exhaustive scan.
    """

    def __init__(self, points):
        self.points = as_matrix(points, "points")
        if self.points.shape[0] == 0:
            raise ValidationError("NeighborIndex needs at least one point")
        self._tree = cKDTree(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def query(self, p, k: int = 1) -> np.ndarray:
        """Indices of the ``k`` rows nearest to ``p``, closest first."""
        p = np.asarray(p, dtype=float).reshape(-1)
        if p.shape[0] != self.dim:
            raise ValidationError(f"query has dimension {p.shape[0]}, index has {self.dim}")
        n = len(self)
        if not 1 <= k <= n:
            raise ValidationError(f"k must be in [1, {n}], got {k}")
        if k == n:
            cand = np.arange(n)
        else:
            dist, _ = self._tree.query(p, k=k)
            radius = float(np.atleast_1d(dist)[-1])
            # widen slightly so points tied with the k-th distance are included
            radius = radius * (1 + 1e-9) + 1e-300
            cand = np.asarray(self._tree.query_ball_point(p, radius), dtype=int)
            if cand.size < k:
                cand = np.arange(n)
        d = np.sqrt(np.sum((self.points[cand] - p) ** 2, axis=1))
        order = np.lexsort((cand, d))
        return cand[order[:k]]

    def query_many(self, P, k: int = 1) -> np.ndarray:
        """Row-wise :meth:`query`; returns an ``(m, k)`` integer array."""
        P = as_matrix(P, "queries")
        if P.shape[1] != self.dim:
            raise ValidationError(f"queries have dimension {P.shape[1]}, index has {self.dim}")
        out = np.empty((P.shape[0], k), dtype=int)
        for r, p in enumerate(P):
            out[r] = self.query(p, k)
        return out


def nn_query(idx: NeighborIndex, p, k: int = 1) -> np.ndarray:
    return idx.query(p, k)
