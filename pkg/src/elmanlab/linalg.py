"""Seeded linear-algebra substrate.

Gaussian sampling, Gram-Schmidt orthonormalization, projection onto an
orthogonal complement, and spectral / row-wise norms.  Everything works on
plain float64 numpy arrays and is deterministic given a SeededRng.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import SeededRng

# Residuals below _DEGENERACY_TOL * (input norm + 1) trigger an arbitrary
# orthogonal completion instead of normalizing noise.
_DEGENERACY_TOL = 1e-10


def gaussian_matrix(rows, cols, variance, rng: SeededRng) -> np.ndarray:
    """An i.i.d. centered Gaussian matrix with the given entry variance.

    variance 0 yields an exact zero matrix.
    """
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    if variance == 0:
        return np.zeros((rows, cols))
    gen = rng.generator()
    return gen.normal(0.0, math.sqrt(variance), size=(rows, cols))


@dataclass(frozen=True)
class OrthonormalBasis:
    """Columns of `u` form an orthonormal set in R^ambient_dim.

    `degenerate_count` records how many input vectors were (numerically)
    inside the span of their predecessors and got replaced by arbitrary
    orthogonal completions.
    """

    u: np.ndarray  # shape (ambient_dim, k)
    degenerate_count: int = 0

    @property
    def ambient_dim(self):
        return self.u.shape[0]

    @property
    def num_columns(self):
        return self.u.shape[1]


def _orthogonalize(u_cols, v):
    """One modified Gram-Schmidt pass of v against the columns in u_cols."""
    w = v.copy()
    for q in u_cols:
        w -= (q @ w) * q
    return w


def gram_schmidt(vectors, rng: SeededRng | None = None) -> OrthonormalBasis:
    """Orthonormalize an ordered list of vectors.

    Column i spans the residual of vector i against the previous columns.
    A numerically degenerate residual is replaced by an arbitrary unit
    vector orthogonal to all prior columns (random direction, projected
    and normalized).
    """
    vectors = [np.asarray(v, dtype=float) for v in vectors]
    if not vectors:
        raise ValueError("need at least one vector")
    dim = vectors[0].shape[0]
    for v in vectors:
        if v.shape != (dim,):
            raise ValueError("all vectors must share one dimension")
    if len(vectors) > dim:
        raise ValueError("more vectors than ambient dimension")
    if rng is None:
        rng = SeededRng(0x6C67, 0x6773)
    gen = rng.split("gram_schmidt").generator()

    cols = []
    degenerate = 0
    for v in vectors:
        w = _orthogonalize(cols, v)
        # second pass for numerical stability
        w = _orthogonalize(cols, w)
        if np.linalg.norm(w) < _DEGENERACY_TOL * (np.linalg.norm(v) + 1.0):
            degenerate += 1
            while True:
                cand = gen.normal(size=dim)
                cand = _orthogonalize(cols, cand)
                cand = _orthogonalize(cols, cand)
                nrm = np.linalg.norm(cand)
                if nrm > 1e-6:
                    w = cand / nrm
                    break
        else:
            w = w / np.linalg.norm(w)
        cols.append(w)
    return OrthonormalBasis(np.column_stack(cols), degenerate)


def empty_basis(ambient_dim) -> OrthonormalBasis:
    return OrthonormalBasis(np.zeros((ambient_dim, 0)))


def extend_basis(basis: OrthonormalBasis, v, rng: SeededRng | None = None):
    """Append the normalized residual of v to an existing basis.

    Equivalent to rerunning gram_schmidt on the enlarged list, but O(k m)
    instead of O(k^2 m).  Returns the enlarged basis.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (basis.ambient_dim,):
        raise ValueError("dimension mismatch")
    cols = [basis.u[:, j] for j in range(basis.num_columns)]
    w = _orthogonalize(cols, v)
    w = _orthogonalize(cols, w)
    degenerate = basis.degenerate_count
    if np.linalg.norm(w) < _DEGENERACY_TOL * (np.linalg.norm(v) + 1.0):
        degenerate += 1
        if rng is None:
            rng = SeededRng(0x6C67, 0x6578)
        gen = rng.split(("extend", basis.num_columns)).generator()
        while True:
            cand = gen.normal(size=basis.ambient_dim)
            cand = _orthogonalize(cols, cand)
            cand = _orthogonalize(cols, cand)
            nrm = np.linalg.norm(cand)
            if nrm > 1e-6:
                w = cand / nrm
                break
    else:
        w = w / np.linalg.norm(w)
    return OrthonormalBasis(np.column_stack(cols + [w]), degenerate)


def project_complement(basis: OrthonormalBasis, h) -> np.ndarray:
    """(I - U U^T) h, the component of h orthogonal to the basis columns."""
    h = np.asarray(h, dtype=float)
    if h.shape != (basis.ambient_dim,):
        raise ValueError("dimension mismatch")
    if basis.num_columns == 0:
        return h.copy()
    return h - basis.u @ (basis.u.T @ h)


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    converged: bool


def spectral_norm(M, rel_tol=1e-9, rng: SeededRng | None = None,
                  matvec=None, rmatvec=None, shape=None) -> SpectralEstimate:
    """Largest singular value via power iteration on M^T M.

    Either pass a dense matrix M, or matvec/rmatvec callables with an
    explicit (rows, cols) shape for operators that should never be
    materialized (e.g. long masked-matrix chains).  Unconverged runs
    return the best estimate with converged=False.
    """
    if matvec is None:
        M = np.asarray(M, dtype=float)
        rows, cols = M.shape
        matvec = lambda v: M @ v
        rmatvec = lambda v: M.T @ v
    else:
        rows, cols = shape
    if rng is None:
        rng = SeededRng(0x6C67, 0x7370)

    max_iters = max(100, int(10 * math.log2(max(rows * cols, 2))))
    best = 0.0
    converged = False
    for restart in range(3):
        gen = rng.split(("power", restart)).generator()
        v = gen.normal(size=cols)
        nrm = np.linalg.norm(v)
        if nrm == 0:
            continue
        v /= nrm
        sigma = 0.0
        for _ in range(max_iters):
            w = rmatvec(matvec(v))
            nrm = np.linalg.norm(w)
            if nrm == 0:
                sigma = 0.0
                converged = True
                break
            new_sigma = math.sqrt(nrm)
            v = w / nrm
            if abs(new_sigma - sigma) <= rel_tol * max(new_sigma, 1e-300):
                sigma = new_sigma
                converged = True
                break
            sigma = new_sigma
        best = max(best, sigma)
        if converged:
            break
    return SpectralEstimate(best, converged)


def row_lp_norm(M, p) -> float:
    """(sum_i ||row_i||_2^p)^(1/p); p=2 equals the Frobenius norm."""
    if p < 1:
        raise ValueError("p must be >= 1")
    M = np.asarray(M, dtype=float)
    row_norms = np.linalg.norm(M, axis=1)
    return float(np.sum(row_norms ** p) ** (1.0 / p))
