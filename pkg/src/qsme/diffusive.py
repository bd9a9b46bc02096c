"""Continuous-time diffusive stochastic master equations.

Integration uses a measurement-normalized Kraus scheme.  With

    M0 = I + (-iH - 1/2 sum_nu L_nu† L_nu) dt,
    S  = M0† M0 + (sum_nu L_nu† L_nu) dt,
    M~0 = M0 S^{-1/2},      L~_nu = L_nu S^{-1/2},

one integration step conditioned on the measurement record dy is

    M~_dy = M~0 + sum_nu sqrt(eta_nu) dy_nu L~_nu,
    rho'  = (M~_dy rho M~_dy† + sum_nu (1-eta_nu) L~_nu rho L~_nu† dt) / Tr{...}.

The normalization makes M~0†M~0 + dt sum L~†L~ = I exactly, so the step is a
valid (unbiased) measurement update; positivity holds for every dy because the
numerator is a sum of sandwiches, and the trace is restored exactly after each
step.  Two record-sampling modes are provided:

  * "first-order" (default): dy_nu = sqrt(eta_nu) Tr((L_nu+L_nu†) rho) dt + dW_nu
    with independent dW ~ N(0, dt);
  * "exact": dy = s sqrt(dt) with s drawn from the true outcome density
    p(s) = Tr{M~_{s sqrt(dt)} rho M~† + sum (1-eta) L~ rho L~† dt} prod phi(s_nu),
    by rejection against an N(0, 2) proposal with an exact envelope.

The two agree to O(dt^{3/2}); first-order is the production path.

A Hamiltonian-splitting variant sandwiches the measurement update between two
half-step unitaries e^{-i dt H / 2}, with M0 reduced to I - (dt/2) sum L†L.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalGuardError, ValidationError
from .linalg import (
    EIG_FLOOR,
    conjugate_batch,
    dagger,
    frobenius,
    herm_eig,
    herm_expm,
    require_hermitian,
    sandwich_batch,
    weighted_sandwich_batch,
)
from .records import TrajectoryRecord
from .rng import NOISE_BLOCK
from .systems import pauli, renormalize_density


@dataclass(frozen=True)
class DiffusiveModel:
    """Diffusive SME specification: H = h0 + u(t) h1, measurement/decoherence
    channels (L_nu, eta_nu) with efficiencies in [0, 1] (eta = 0: unread)."""

    h0: np.ndarray
    channels: Sequence[tuple[np.ndarray, float]]
    h1: np.ndarray | None = None
    control: Callable[[float], float] | None = None

    def __post_init__(self):
        h0 = require_hermitian(self.h0, what="h0")
        object.__setattr__(self, "h0", h0)
        if self.h1 is not None:
            h1 = require_hermitian(self.h1, what="h1")
            if h1.shape != h0.shape:
                raise ValidationError("h1 dimension does not match h0")
            object.__setattr__(self, "h1", h1)
        ls = []
        etas = []
        for i, (op, eta) in enumerate(self.channels):
            op = np.asarray(op, dtype=complex)
            if op.shape != h0.shape:
                raise ValidationError(f"channel {i} dimension does not match h0")
            if not 0.0 <= eta <= 1.0:
                raise ValidationError(f"channel {i} efficiency {eta} outside [0, 1]")
            ls.append(op)
            etas.append(float(eta))
        object.__setattr__(self, "channels", tuple((l, e) for l, e in zip(ls, etas)))

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def ls(self) -> np.ndarray:
        if self.channels:
            return np.stack([op for op, _ in self.channels])
        return np.zeros((0, self.dim, self.dim), dtype=complex)

    def etas(self) -> np.ndarray:
        return np.array([eta for _, eta in self.channels], dtype=float)

    def control_value(self, t: float) -> float:
        return float(self.control(t)) if self.control is not None else 0.0

    def hamiltonian(self, t: float) -> np.ndarray:
        h = self.h0
        if self.h1 is not None and self.control is not None:
            h = h + self.control_value(t) * self.h1
        return h


def qubit_zmeas_model(eta: float, gamma: float = 1.0) -> DiffusiveModel:
    """Continuously z-monitored qubit: H = 0, single channel L = sqrt(gamma) sigma_z.

    At gamma = 1 the drift is sigma_z rho sigma_z - rho and the output reads
    dy = 2 sqrt(eta) Tr(sigma_z rho) dt + dW.
    """
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    return DiffusiveModel(
        h0=np.zeros((2, 2), dtype=complex),
        channels=[(math.sqrt(gamma) * pauli("z"), eta)],
    )


@dataclass(frozen=True)
class DiffusiveStepOperators:
    """Normalized step operators for a fixed (H, {L, eta}, dt)."""

    m0_tilde: np.ndarray     # (d, d)
    l_tilde: np.ndarray      # (k, d, d)
    etas: np.ndarray         # (k,)
    dt: float
    a_phys: np.ndarray       # (k, d, d) physical L + L† (output drift)

    @property
    def dim(self) -> int:
        return self.m0_tilde.shape[0]

    @property
    def n_channels(self) -> int:
        return self.l_tilde.shape[0]

    @property
    def sqrt_eta(self) -> np.ndarray:
        return np.sqrt(self.etas)

    def completeness_residual(self) -> float:
        total = dagger(self.m0_tilde) @ self.m0_tilde
        if self.n_channels:
            total = total + self.dt * np.einsum(
                "kji,kjl->il", self.l_tilde.conj(), self.l_tilde
            )
        return frobenius(total - np.eye(self.dim))


def build_step_operators(
    model: DiffusiveModel, t: float, dt: float, floor: float = EIG_FLOOR
) -> DiffusiveStepOperators:
    """M~0 = M0 S^{-1/2}, L~ = L S^{-1/2} for H = h0 + u(t) h1."""
    if dt <= 0:
        raise ValidationError("dt must be positive")
    h = model.hamiltonian(t)
    ls = model.ls()
    return _normalize_ops(h, ls, model.etas(), dt, floor, include_h_in_m0=True)


def _normalize_ops(h, ls, etas, dt, floor, include_h_in_m0=True) -> DiffusiveStepOperators:
    d = h.shape[0]
    eye = np.eye(d, dtype=complex)
    ldl = np.einsum("kji,kjl->il", ls.conj(), ls) if len(ls) else np.zeros((d, d), complex)
    m0 = eye - 0.5 * dt * ldl
    if include_h_in_m0:
        m0 = m0 - 1j * dt * h
    s = dagger(m0) @ m0 + dt * ldl
    eig = herm_eig(s)
    if float(eig.eigenvalues.min()) < floor:
        raise NumericalGuardError(
            f"step normalization spectrum reaches {eig.eigenvalues.min():.3e} "
            f"< floor {floor:.1e}: dt={dt} too large for the operator norms"
        )
    u = eig.eigenvectors
    s_inv_sqrt = (u / np.sqrt(eig.eigenvalues)) @ u.conj().T
    s_inv_sqrt = 0.5 * (s_inv_sqrt + dagger(s_inv_sqrt))
    a_phys = ls + dagger(ls) if len(ls) else ls
    return DiffusiveStepOperators(
        m0_tilde=m0 @ s_inv_sqrt,
        l_tilde=np.einsum("kij,jl->kil", ls, s_inv_sqrt) if len(ls) else ls,
        etas=np.asarray(etas, dtype=float),
        dt=float(dt),
        a_phys=a_phys,
    )


def apply_diffusive_update(
    ops: DiffusiveStepOperators, rho: np.ndarray, dy: np.ndarray
) -> np.ndarray:
    """Deterministic record-driven update; rho and dy may be stacked (lanes first)."""
    rho = np.asarray(rho, dtype=complex)
    dy = np.asarray(dy, dtype=float)
    single = rho.ndim == 2
    rho_b = rho[None] if single else rho
    dy_b = np.atleast_2d(dy) if single else dy
    out = _apply_update_batch(ops, rho_b, dy_b)
    return out[0] if single else out


def diffusive_update_numerator(ops, rho_b, dy_b) -> np.ndarray:
    """Unnormalized update M~_dy rho M~_dy† + sum (1-eta) L~ rho L~† dt.

    Its trace is the relative outcome likelihood; lanes first when stacked.
    """
    if ops.n_channels:
        coeff = ops.sqrt_eta[None, :] * dy_b
        m = ops.m0_tilde[None] + np.einsum("bk,kij->bij", coeff, ops.l_tilde)
    else:
        m = np.broadcast_to(ops.m0_tilde, rho_b.shape)
    num = sandwich_batch(m, rho_b)
    if ops.n_channels:
        w = (1.0 - ops.etas) * ops.dt
        if np.any(w > 0):
            num = num + weighted_sandwich_batch(w, ops.l_tilde, rho_b)
    return num


def _apply_update_batch(ops, rho_b, dy_b):
    return renormalize_density(diffusive_update_numerator(ops, rho_b, dy_b))


def _output_drift(ops, rho_b):
    """sqrt(eta_nu) Tr((L_nu + L_nu†) rho) dt per channel (physical operators)."""
    if not ops.n_channels:
        return np.zeros((rho_b.shape[0], 0))
    tr = np.einsum("kij,bji->bk", ops.a_phys, rho_b).real
    return tr * ops.sqrt_eta[None, :] * ops.dt


def _exact_density_coeffs(ops, rho):
    """Coefficients of the outcome density p(s) = (c0 + b·s + s·A s) prod phi(s)."""
    k = ops.n_channels
    m0, lt = ops.m0_tilde, ops.l_tilde
    m0_rho_m0 = m0 @ rho @ dagger(m0)
    c0 = float(np.trace(m0_rho_m0).real)
    if k:
        lr_l = np.einsum("kij,jl,kil->k", lt, rho, lt.conj())
        c0 += float(np.sum((1.0 - ops.etas) * ops.dt * lr_l.real))
    scale = ops.sqrt_eta * math.sqrt(ops.dt)
    b = np.zeros(k)
    a = np.zeros((k, k))
    for i in range(k):
        b[i] = 2.0 * scale[i] * float(np.trace(lt[i] @ rho @ dagger(m0)).real)
        for j in range(k):
            a[i, j] = scale[i] * scale[j] * float(np.trace(lt[i] @ rho @ dagger(lt[j])).real)
    a = 0.5 * (a + a.T)
    return c0, b, a


def _sample_exact(ops, rho, rng, max_tries: int = 100000) -> np.ndarray:
    """Draw s from p(s) by rejection against N(0, 2 I).

    The importance weight q(s) = c0 + b·s + s·A s is an unbounded quadratic, so
    the proposal variance is inflated to 2; the envelope maximizes the radial
    bound (c0 + |b| r + lmax r^2) e^{-r^2/4} exactly via its cubic derivative.
    """
    k = ops.n_channels
    if k == 0:
        return np.zeros(0)
    c0, b, a = _exact_density_coeffs(ops, rho)
    bn = float(np.linalg.norm(b))
    lmax = max(float(np.linalg.eigvalsh(a).max()), 0.0) if k else 0.0
    # stationary points of (c0 + bn r + lmax r^2) e^{-r^2/4} on r >= 0
    candidates = [0.0]
    poly = np.array([-0.5 * lmax, -0.5 * bn, 2.0 * lmax - 0.5 * c0, bn])
    nz = np.nonzero(np.abs(poly) > 0)[0]
    if len(nz) and nz[0] < 3:
        for r in np.roots(poly[nz[0] :]):
            if abs(r.imag) < 1e-10 and r.real > 0:
                candidates.append(float(r.real))
    radial = max((c0 + bn * r + lmax * r * r) * math.exp(-0.25 * r * r) for r in candidates)
    envelope = (2.0 ** (0.5 * k)) * radial * (1.0 + 1e-12)
    for _ in range(max_tries):
        s = math.sqrt(2.0) * rng.standard_normal(k)
        q = c0 + float(b @ s) + float(s @ a @ s)
        w = q * (2.0 ** (0.5 * k)) * math.exp(-0.25 * float(s @ s))
        if rng.random() * envelope <= w:
            return s
    raise NumericalGuardError("exact record sampling failed to accept")


def diffusive_step(
    ops: DiffusiveStepOperators,
    model: DiffusiveModel,
    rho,
    rng,
    mode: str = "first-order",
) -> tuple[np.ndarray, np.ndarray]:
    """One integration step: sample the record dy, update the state."""
    rho = np.asarray(rho, dtype=complex)
    if mode == "first-order":
        drift = _output_drift(ops, rho[None])[0]
        dy = drift + math.sqrt(ops.dt) * rng.standard_normal(ops.n_channels)
    elif mode == "exact":
        dy = _sample_exact(ops, rho, rng) * math.sqrt(ops.dt)
    else:
        raise ValidationError(f"unknown sampling mode {mode!r}")
    return dy, apply_diffusive_update(ops, rho, dy)


# ---------------------------------------------------------------------------
# Hamiltonian splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitStepOperators:
    """Half-step unitary plus measurement-only normalized operators."""

    u_half: np.ndarray
    inner: DiffusiveStepOperators

    @property
    def dt(self) -> float:
        return self.inner.dt


def build_split_operators(
    model: DiffusiveModel, t: float, dt: float, floor: float = EIG_FLOOR
) -> SplitStepOperators:
    if dt <= 0:
        raise ValidationError("dt must be positive")
    h = model.hamiltonian(t)
    u_half = herm_expm(h, -0.5j * dt)
    inner = _normalize_ops(h, model.ls(), model.etas(), dt, floor, include_h_in_m0=False)
    return SplitStepOperators(u_half=u_half, inner=inner)


def apply_split_update(sops: SplitStepOperators, rho, dy) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    single = rho.ndim == 2
    rho_b = rho[None] if single else rho
    dy_b = np.atleast_2d(np.asarray(dy, dtype=float)) if single else np.asarray(dy, dtype=float)
    u = sops.u_half
    half = conjugate_batch(u, rho_b)
    inner = _apply_update_batch(sops.inner, half, dy_b)
    out = renormalize_density(conjugate_batch(u, inner))
    return out[0] if single else out


def diffusive_step_split(
    model: DiffusiveModel,
    rho,
    dt: float,
    rng,
    t: float = 0.0,
    mode: str = "first-order",
    sops: SplitStepOperators | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Split step: e^{-i dt H/2}, measurement/dissipation update, e^{-i dt H/2}.

    The record drift (and the exact-mode density) uses the half-rotated state,
    i.e. the state the measurement operators act on.
    """
    if sops is None:
        sops = build_split_operators(model, t, dt)
    rho = np.asarray(rho, dtype=complex)
    u = sops.u_half
    half = u @ rho @ dagger(u)
    if mode == "first-order":
        drift = _output_drift(sops.inner, half[None])[0]
        dy = drift + math.sqrt(dt) * rng.standard_normal(sops.inner.n_channels)
    elif mode == "exact":
        dy = _sample_exact(sops.inner, half, rng) * math.sqrt(dt)
    else:
        raise ValidationError(f"unknown sampling mode {mode!r}")
    inner = apply_diffusive_update(sops.inner, half, dy)
    return dy, renormalize_density(u @ inner @ dagger(u))


# ---------------------------------------------------------------------------
# Trajectory runners (single and vectorized ensemble)
# ---------------------------------------------------------------------------


@dataclass
class DiffusiveEnsembleResult:
    """Lockstep batch of diffusive trajectories plus running aggregates."""

    times: np.ndarray
    dy: np.ndarray | None                     # (ntraj, n_windows, k) window sums
    observables: dict[str, np.ndarray] | None  # traces (ntraj, n_windows+1)
    obs_sum: dict[str, np.ndarray]
    obs_sumsq: dict[str, np.ndarray]
    rho_sum: np.ndarray | None                # (n_windows+1, d, d) summed over lanes
    final_rho: np.ndarray                     # (ntraj, d, d)
    ntraj: int


def run_diffusive_ensemble(
    model: DiffusiveModel,
    rho0,
    dt: float,
    nsteps: int,
    rngs,
    t0: float = 0.0,
    mode: str = "first-order",
    split: bool = False,
    observables: dict | None = None,
    stride: int = 1,
    record_dy: bool = True,
    record_traces: bool = True,
    record_rho_sum: bool = False,
    floor: float = EIG_FLOOR,
) -> DiffusiveEnsembleResult:
    """Integrate a batch of trajectories in lockstep lanes.

    Each lane owns one generator from `rngs`; first-order mode consumes
    standard normals in NOISE_BLOCK chunks (see qsme.rng), exact mode consumes
    per-lane (proposal, uniform) pairs.  Step operators are rebuilt only when
    the control value changes.  Observable callables act on stacked states
    (B, d, d) -> (B,).  With stride > 1, dy rows hold the summed increments of
    each recording window.
    """
    if nsteps % stride != 0:
        raise ValidationError("nsteps must be a multiple of stride")
    rho0 = np.asarray(rho0, dtype=complex)
    nlanes = len(rngs)
    d = rho0.shape[0]
    rho = np.broadcast_to(rho0, (nlanes, d, d)).copy()
    observables = observables or {}
    k = model.n_channels

    nrec = nsteps // stride
    obs_traces = (
        {name: np.empty((nlanes, nrec + 1)) for name in observables}
        if record_traces
        else None
    )
    obs_sum = {name: np.zeros(nrec + 1) for name in observables}
    obs_sumsq = {name: np.zeros(nrec + 1) for name in observables}
    rho_sum = np.zeros((nrec + 1, d, d), dtype=complex) if record_rho_sum else None
    dy_out = np.zeros((nlanes, nrec, k)) if record_dy else None

    def record_point(idx, rho_now):
        for name, fn in observables.items():
            vals = fn(rho_now)
            if obs_traces is not None:
                obs_traces[name][:, idx] = vals
            obs_sum[name][idx] += vals.sum()
            obs_sumsq[name][idx] += float(np.sum(vals * vals))
        if rho_sum is not None:
            rho_sum[idx] += rho_now.sum(axis=0)

    record_point(0, rho)

    sqdt = math.sqrt(dt)
    u_prev = None
    ops = None
    sops = None
    window = np.zeros((nlanes, k))
    step = 0
    rec = 0
    while step < nsteps:
        block = min(NOISE_BLOCK, nsteps - step)
        if mode == "first-order":
            normals = np.stack([rng.standard_normal((block, k)) for rng in rngs], axis=0)
        for j in range(block):
            t = t0 + step * dt
            u_now = model.control_value(t)
            if ops is None or u_now != u_prev:
                if split:
                    sops = build_split_operators(model, t, dt, floor)
                    ops = sops.inner
                else:
                    ops = build_step_operators(model, t, dt, floor)
                u_prev = u_now

            if split:
                base = conjugate_batch(sops.u_half, rho)
            else:
                base = rho

            if mode == "first-order":
                dy = _output_drift(ops, base) + sqdt * normals[:, j]
            else:
                dy = np.stack(
                    [_sample_exact(ops, base[i], rngs[i]) * sqdt for i in range(nlanes)]
                )

            rho = _apply_update_batch(ops, base, dy)
            if split:
                rho = renormalize_density(conjugate_batch(sops.u_half, rho))

            if k:
                window += dy
            step += 1
            if step % stride == 0:
                rec += 1
                if dy_out is not None:
                    dy_out[:, rec - 1] = window
                window = np.zeros((nlanes, k))
                record_point(rec, rho)

    times = t0 + np.arange(nrec + 1, dtype=float) * (stride * dt)
    return DiffusiveEnsembleResult(
        times=times,
        dy=dy_out,
        observables=obs_traces,
        obs_sum=obs_sum,
        obs_sumsq=obs_sumsq,
        rho_sum=rho_sum,
        final_rho=rho,
        ntraj=nlanes,
    )


def run_diffusive(
    model: DiffusiveModel,
    rho0,
    dt: float,
    tmax: float,
    rng,
    observables: dict | None = None,
    stride: int = 1,
    mode: str = "first-order",
    split: bool = False,
) -> TrajectoryRecord:
    """Integrate a single trajectory and return its record."""
    nsteps = steps_for(dt, tmax)
    res = run_diffusive_ensemble(
        model,
        rho0,
        dt,
        nsteps,
        [rng],
        mode=mode,
        split=split,
        observables=observables,
        stride=stride,
    )
    return TrajectoryRecord(
        times=res.times,
        dy=res.dy[0] if res.dy is not None else None,
        observables={k: v[0] for k, v in (res.observables or {}).items()},
    )


def steps_for(dt: float, tmax: float) -> int:
    if dt <= 0 or tmax <= 0:
        raise ValidationError("dt and tmax must be positive")
    nsteps = int(round(tmax / dt))
    if nsteps < 1:
        raise ValidationError("tmax is smaller than dt")
    return nsteps
