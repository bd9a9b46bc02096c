"""Qubit/photon building blocks: Pauli algebra, truncated Fock spaces,
coherent states, density operators, and the two qubit-photon interaction
propagators (dispersive and resonant) that drive the discrete measurement
models.

Conventions, fixed across the whole package:
  * qubit basis ordering |g> = e0, |e> = e1, hence sigma_z = diag(-1, +1)
    (sigma_z = |e><e| - |g><g|);
  * composite spaces are ordered qubit (x) photon, qubit being the slow index;
  * Fock spaces are truncated at nmax (dim = nmax + 1); a|k> = sqrt(k)|k-1>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .linalg import HERM_TOL, as_operator, dagger, frobenius, hermitize, kron

# Default tail-mass tolerance for truncated coherent states.
COHERENT_TAIL_TOL = 1e-8

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, 1j], [-1j, 0]], dtype=complex),
    "z": np.array([[-1, 0], [0, 1]], dtype=complex),
    "plus": np.array([[0, 0], [1, 0]], dtype=complex),   # |e><g|
    "minus": np.array([[0, 1], [0, 0]], dtype=complex),  # |g><e|
}

KET_G = np.array([1.0, 0.0], dtype=complex)
KET_E = np.array([0.0, 1.0], dtype=complex)


def pauli(which: str) -> np.ndarray:
    """Pauli / ladder operator in the |g>, |e> ordering."""
    try:
        return _PAULI[which].copy()
    except KeyError:
        raise ValidationError(
            f"unknown Pauli label {which!r}; expected one of {sorted(_PAULI)}"
        ) from None


@dataclass(frozen=True)
class FockSpace:
    """Photon Hilbert space truncated at occupation nmax."""

    nmax: int

    def __post_init__(self):
        if self.nmax < 0:
            raise ValidationError("nmax must be non-negative")

    @property
    def dim(self) -> int:
        return self.nmax + 1

    def annihilation(self) -> np.ndarray:
        a = np.zeros((self.dim, self.dim), dtype=complex)
        for k in range(1, self.dim):
            a[k - 1, k] = math.sqrt(k)
        return a

    def creation(self) -> np.ndarray:
        return dagger(self.annihilation())

    def number(self) -> np.ndarray:
        return np.diag(np.arange(self.dim, dtype=float)).astype(complex)

    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    def fock(self, n: int) -> np.ndarray:
        if not 0 <= n <= self.nmax:
            raise ValidationError(f"Fock index {n} outside [0, {self.nmax}]")
        v = np.zeros(self.dim, dtype=complex)
        v[n] = 1.0
        return v


def coherent(alpha: complex, space: FockSpace, tail_tol: float = COHERENT_TAIL_TOL) -> np.ndarray:
    """Truncated coherent state |alpha>, renormalized after truncation.

    psi_k = exp(-|alpha|^2/2) alpha^k / sqrt(k!).  Rejects the request when the
    truncated tail mass 1 - sum |psi_k|^2 exceeds tail_tol.
    """
    psi = np.zeros(space.dim, dtype=complex)
    psi[0] = math.exp(-0.5 * abs(alpha) ** 2)
    for k in range(1, space.dim):
        psi[k] = psi[k - 1] * alpha / math.sqrt(k)
    mass = float(np.sum(np.abs(psi) ** 2))
    tail = 1.0 - mass
    if tail > tail_tol:
        raise ValidationError(
            f"nmax={space.nmax} insufficient for |alpha|={abs(alpha):.3g}: "
            f"tail mass {tail:.3e} exceeds {tail_tol:.1e}"
        )
    return psi / math.sqrt(mass)


def sin_over_sqrt(theta: float, n: np.ndarray) -> np.ndarray:
    """sin(theta sqrt(n)) / sqrt(n) with the n = 0 value set to theta by continuity."""
    n = np.asarray(n, dtype=float)
    out = np.full(n.shape, float(theta))
    pos = n > 0
    root = np.sqrt(n[pos])
    out[pos] = np.sin(theta * root) / root
    return out


def dispersive_propagator(theta: float, space: FockSpace) -> np.ndarray:
    """Qubit-conditioned photon phase rotation.

    U = |g><g| (x) e^{-i theta n} + |e><e| (x) e^{+i theta n}; exactly unitary
    on the truncated space (diagonal construction).
    """
    n = np.arange(space.dim, dtype=float)
    phase = np.exp(-1j * theta * n)
    pg = np.outer(KET_G, KET_G.conj())
    pe = np.outer(KET_E, KET_E.conj())
    return kron(pg, np.diag(phase)) + kron(pe, np.diag(np.conj(phase)))


def resonant_propagator(theta: float, space: FockSpace) -> np.ndarray:
    """Excitation-exchanging qubit-photon propagator.

    U = |g><g| (x) cos(theta sqrt(n)) + |e><e| (x) cos(theta sqrt(n+1))
        + |g><e| (x) sin(theta sqrt(n))/sqrt(n) a†
        - |e><g| (x) a sin(theta sqrt(n))/sqrt(n).

    On the truncated space the raising block maps level nmax out of range;
    that matrix element is zeroed, so unitarity holds exactly on the subspace
    of photon levels n <= nmax - 1 (cutoff population must stay negligible).
    """
    n = np.arange(space.dim, dtype=float)
    cos_n = np.diag(np.cos(theta * np.sqrt(n))).astype(complex)
    cos_np1 = np.diag(np.cos(theta * np.sqrt(n + 1.0))).astype(complex)

    # a sin(theta sqrt(n))/sqrt(n): entries (k-1, k) = sin(theta sqrt(k)).
    a_sin = np.zeros((space.dim, space.dim), dtype=complex)
    for k in range(1, space.dim):
        a_sin[k - 1, k] = math.sin(theta * math.sqrt(k))
    # sin(theta sqrt(n))/sqrt(n) a†: entries (k+1, k); the k = nmax one is cut.
    sin_adag = dagger(a_sin)

    pg = np.outer(KET_G, KET_G.conj())
    pe = np.outer(KET_E, KET_E.conj())
    sm = pauli("minus")  # |g><e|
    sp = pauli("plus")   # |e><g|
    return (
        kron(pg, cos_n)
        + kron(pe, cos_np1)
        + kron(sm, sin_adag)
        - kron(sp, a_sin)
    )


def pure_density(psi) -> np.ndarray:
    """Rank-one density operator |psi><psi| (normalizes psi first)."""
    v = np.asarray(psi, dtype=complex).ravel()
    norm2 = float(np.vdot(v, v).real)
    if norm2 <= 0:
        raise ValidationError("state vector has vanishing norm")
    return np.outer(v, v.conj()) / norm2


def maximally_mixed(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex) / dim


def bloch_density(x: float, y: float, z: float) -> np.ndarray:
    """Qubit density operator (I + x sx + y sy + z sz)/2 for |r| <= 1."""
    r2 = x * x + y * y + z * z
    if r2 > 1.0 + 1e-12:
        raise ValidationError(f"Bloch vector has norm {math.sqrt(r2):.6f} > 1")
    rho = 0.5 * (
        np.eye(2, dtype=complex)
        + x * pauli("x")
        + y * pauli("y")
        + z * pauli("z")
    )
    return hermitize(rho)


def renormalize_density(num: np.ndarray, min_trace: float = 1e-14) -> np.ndarray:
    """Turn an unnormalized positive update result into an exact density operator.

    Works on a single (d, d) matrix or a stacked (..., d, d) batch: re-Hermitizes,
    divides by the trace, then replaces the last diagonal population with the
    complement of the left-to-right partial sum of the others.  Under the
    package's sequential trace evaluation (einsum) the resulting trace is 1.0
    exactly: the complement 1 - p is computed exactly for p in [1/2, 2]
    (Sterbenz), and otherwise carries at most half an ulp of 1, which the final
    addition rounds back to 1.0.  The adjustment is O(ulp), far below the
    positivity tolerance.
    """
    from .errors import NumericalGuardError

    num = hermitize(np.asarray(num, dtype=complex))
    single = num.ndim == 2
    batch = num[None] if single else num
    tr = np.einsum("...ii->...", batch).real
    if np.any(tr < min_trace):
        raise NumericalGuardError(
            f"update trace fell below {min_trace:.1e} (degenerate outcome)"
        )
    rho = batch / tr[..., None, None]
    d = rho.shape[-1]
    if d > 1:
        diag = np.einsum("...ii->...i", rho).real
        partial = np.einsum("...i->...", diag[..., : d - 1])
        rho[..., d - 1, d - 1] = 1.0 - partial
    else:
        rho[..., 0, 0] = 1.0
    return rho[0] if single else rho


def check_density(rho, tol: float = HERM_TOL, eig_tol: float = 1e-10) -> np.ndarray:
    """Validate the density-operator contract: Hermitian, unit trace, PSD.

    Returns the coerced array; raises ValidationError on violation.
    """
    m = as_operator(rho)
    scale = max(frobenius(m), 1.0)
    if frobenius(m - m.conj().T) > tol * scale:
        raise ValidationError("density operator is not Hermitian")
    tr = float(np.trace(m).real)
    if abs(tr - 1.0) > tol:
        raise ValidationError(f"density operator has trace {tr!r} != 1")
    wmin = float(np.min(np.linalg.eigvalsh(hermitize(m))))
    if wmin < -eig_tol:
        raise ValidationError(f"density operator has min eigenvalue {wmin:.3e}")
    return m
