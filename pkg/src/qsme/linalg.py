"""Dense complex matrix algebra specialized for Hermitian structure.

Operators are plain complex numpy arrays.  Everything downstream (propagators,
Kraus channels, step-operator normalization) leans on the routines here for
eigendecomposition-based matrix functions with explicit Hermiticity/positivity
checks: inverse square roots for the trace-preserving step normalization,
exponentials for unitaries, and scalar functions of the number operator.

All returned arrays are freshly allocated; nothing here mutates its inputs, so
values can be shared freely across concurrent trajectory workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError

# Relative Frobenius tolerance for Hermiticity / PSD checks.
HERM_TOL = 1e-10
# Default eigenvalue floor for inverse square roots.  The normalization
# operator S is I + O(dt), so its spectrum sits near 1; the floor only guards
# pathological inputs.
EIG_FLOOR = 1e-12
# Guard against runaway tensor-product dimensions (truncation budget).
MAX_DIM = 4096


def as_operator(a) -> np.ndarray:
    """Coerce to a square complex matrix, rejecting NaN/Inf entries."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValidationError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m.real)) or not np.all(np.isfinite(m.imag)):
        raise ValidationError("matrix contains NaN or Inf entries")
    return m


def frobenius(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def dagger(a: np.ndarray) -> np.ndarray:
    """Hermitian conjugate. For stacked operators, transposes the last two axes."""
    return np.conjugate(np.swapaxes(a, -1, -2))


def hermitize(a: np.ndarray) -> np.ndarray:
    """Project onto the Hermitian part, (a + a†)/2."""
    return 0.5 * (a + dagger(a))


def sandwich_batch(m: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """m rho m† for stacked lanes: (B,d,d),(B,d,d) -> (B,d,d) (pairwise einsum)."""
    t = np.einsum("bij,bjl->bil", m, rho)
    return np.einsum("bil,bkl->bik", t, m.conj())


def conjugate_batch(u: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """u rho u† with a fixed operator u over stacked lanes."""
    t = np.einsum("ij,bjl->bil", u, rho)
    return np.einsum("bil,kl->bik", t, u.conj())


def weighted_sandwich_batch(w: np.ndarray, ops: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """sum_k w_k op_k rho op_k† over stacked lanes: w (k,), ops (k,d,d), rho (B,d,d)."""
    t = np.einsum("kij,bjl->kbil", ops, rho)
    s = np.einsum("kbil,kml->kbim", t, ops.conj())
    return np.einsum("k,kbim->bim", w, s)


def require_hermitian(a, tol: float = HERM_TOL, what: str = "operator") -> np.ndarray:
    m = as_operator(a)
    scale = max(frobenius(m), 1.0)
    if frobenius(m - m.conj().T) > tol * scale:
        raise ValidationError(f"{what} is not Hermitian to relative tolerance {tol}")
    return m


def kron(a, b, max_dim: int = MAX_DIM) -> np.ndarray:
    """Tensor product of two operators, qubit/system-major ordering.

    (a ⊗ b)[i*db + k, j*db + l] = a[i, j] * b[k, l].
    """
    a = as_operator(a)
    b = as_operator(b)
    dim = a.shape[0] * b.shape[0]
    if dim > max_dim:
        raise ValidationError(
            f"tensor-product dimension {dim} exceeds the configured maximum "
            f"{max_dim} (truncation budget exceeded)"
        )
    return np.kron(a, b)


@dataclass(frozen=True)
class HermitianEig:
    """Spectral decomposition A = U diag(w) U† with w ascending, U unitary."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.conj().T


def herm_eig(a, tol: float = HERM_TOL) -> HermitianEig:
    """Eigendecomposition of a Hermitian matrix (ascending eigenvalues)."""
    m = require_hermitian(a, tol)
    w, u = np.linalg.eigh(m)
    return HermitianEig(eigenvalues=w, eigenvectors=u)


def _apply_spectral(eig: HermitianEig, values: np.ndarray) -> np.ndarray:
    u = eig.eigenvectors
    return (u * values) @ u.conj().T


def inv_sqrt_psd(a, floor: float = EIG_FLOOR, tol: float = HERM_TOL) -> np.ndarray:
    """Hermitian B with B a B = I on the subspace of eigenvalues >= floor.

    Eigenvalues below the floor are clamped to the floor before inversion.
    Rejects inputs with an eigenvalue below -tol * ||a||.
    """
    if not floor > 0:
        raise ValidationError("floor must be positive")
    eig = herm_eig(a, tol)
    w = eig.eigenvalues
    scale = max(float(np.max(np.abs(w))), 1.0) if w.size else 1.0
    if np.min(w) < -tol * scale:
        raise ValidationError(
            f"matrix is not positive semidefinite (min eigenvalue {np.min(w):.3e})"
        )
    clamped = np.maximum(w, floor)
    b = _apply_spectral(eig, 1.0 / np.sqrt(clamped))
    return hermitize(b)


def herm_expm(h, scale: complex = 1.0, tol: float = HERM_TOL) -> np.ndarray:
    """exp(scale * h) for Hermitian h, via eigendecomposition.

    For purely imaginary scale the result is unitary.
    """
    eig = herm_eig(h, tol)
    return _apply_spectral(eig, np.exp(scale * eig.eigenvalues.astype(complex)))


def func_of_hermitian(a, f: Callable, tol: float = HERM_TOL) -> np.ndarray:
    """f applied to the eigenvalues of Hermitian a, rotated back.

    f may be vectorized (numpy ufunc) or scalar; values must be finite at
    every eigenvalue.
    """
    eig = herm_eig(a, tol)
    w = eig.eigenvalues
    try:
        vals = np.asarray(f(w), dtype=complex)
        if vals.shape != w.shape:
            raise TypeError
    except (TypeError, ValueError):
        vals = np.asarray([f(x) for x in w], dtype=complex)
    if not np.all(np.isfinite(vals.real)) or not np.all(np.isfinite(vals.imag)):
        raise ValidationError("function returned a non-finite value at an eigenvalue")
    return _apply_spectral(eig, vals)
