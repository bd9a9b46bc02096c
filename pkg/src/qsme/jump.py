"""Jump and mixed diffusive/jump stochastic master equations.

A jump model couples the system to counters: jump operators V_mu', per-detector
shot-noise (dark-count) rates theta_bar_mu, and a non-negative efficiency
matrix eta_bar[mu, mu'] whose column sums eta_bar_mu' = sum_mu eta_bar[mu, mu']
are at most 1.  On a small time step dt:

  * detector mu clicks with probability
        p_mu = (theta_bar_mu + sum_mu' eta_bar[mu, mu'] Tr(V_mu' rho V_mu'†)) dt,
    and the state jumps to
        rho~ = (theta_bar_mu rho + sum_mu' eta_bar[mu, mu'] V_mu' rho V_mu'†) / Tr{...};
  * otherwise no detector clicks and the state follows the smooth update
        rho' = (M0 rho M0† + sum_mu' (1 - eta_bar_mu') V_mu' rho V_mu'† dt) / Tr{...},
        M0 = I - (iH + 1/2 sum V†V) dt.

At most one click happens per step (single categorical draw over {no-click,
click-mu}); the dt precondition sum_mu p_mu <= 0.1 keeps the neglected
two-click probability at the per-mille level of a step.

The mixed model adds diffusive channels (L_nu, eta_nu): the jump draw is
resolved first (click probabilities and the dy drift both use the pre-click
state), then the combined smooth Kraus update

    M_dy = I - (iH + 1/2 sum L†L + 1/2 sum V†V) dt + sum sqrt(eta_nu) dy_nu L_nu

with the unread remainders (1-eta) L rho L† dt and (1-eta_bar) V rho V† dt is
applied to the post-jump state.  Degenerate mixed models (no jump channels, or
no diffusive channels) delegate to the specialized diffusive/jump steps so the
reductions are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffusive import (
    DiffusiveModel,
    build_step_operators,
    diffusive_step,
    run_diffusive_ensemble,
    steps_for,
)
from .errors import NumericalGuardError, ValidationError
from .linalg import (
    conjugate_batch,
    dagger,
    require_hermitian,
    sandwich_batch,
    weighted_sandwich_batch,
)
from .records import TrajectoryRecord
from .rng import NOISE_BLOCK
from .systems import pauli, pure_density, renormalize_density

# Per-step total click probability cap (small-dt regime).
MAX_CLICK_PROB = 0.1


@dataclass(frozen=True)
class JumpModel:
    """Counting-measurement SME specification."""

    h: np.ndarray
    jumps: Sequence[np.ndarray]
    shot_rates: Sequence[float]
    efficiency: np.ndarray | None = None

    def __post_init__(self):
        h = require_hermitian(self.h, what="h")
        object.__setattr__(self, "h", h)
        vs = [np.asarray(v, dtype=complex) for v in self.jumps]
        for i, v in enumerate(vs):
            if v.shape != h.shape:
                raise ValidationError(f"jump operator {i} dimension does not match h")
        object.__setattr__(self, "jumps", tuple(vs))
        rates = np.asarray(self.shot_rates, dtype=float)
        if rates.ndim != 1:
            raise ValidationError("shot_rates must be a vector (one per detector)")
        if np.any(~np.isfinite(rates)) or np.any(rates < 0):
            raise ValidationError("shot rates must be finite and non-negative")
        object.__setattr__(self, "shot_rates", rates)
        if self.efficiency is None:
            if len(rates) != len(vs):
                raise ValidationError(
                    "without an efficiency matrix, detectors and jump operators "
                    "must be in one-to-one correspondence"
                )
            eff = np.eye(len(vs))
        else:
            eff = np.asarray(self.efficiency, dtype=float)
        if eff.shape != (len(rates), len(vs)):
            raise ValidationError(
                f"efficiency matrix must have shape (n_detectors={len(rates)}, "
                f"n_jumps={len(vs)}), got {eff.shape}"
            )
        if np.any(eff < 0):
            raise ValidationError("efficiency entries must be non-negative")
        if np.any(eff.sum(axis=0) > 1 + 1e-12):
            raise ValidationError("efficiency column sums must not exceed 1")
        object.__setattr__(self, "efficiency", eff)

    @property
    def dim(self) -> int:
        return self.h.shape[0]

    @property
    def n_detectors(self) -> int:
        return len(self.shot_rates)

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)

    def vs(self) -> np.ndarray:
        if self.jumps:
            return np.stack(self.jumps)
        return np.zeros((0, self.dim, self.dim), dtype=complex)

    def column_efficiencies(self) -> np.ndarray:
        return self.efficiency.sum(axis=0)


def qubit_decay_model(
    shot_rate: float = 0.0, efficiency: float = 1.0, rate: float = 1.0
) -> JumpModel:
    """Photon-counted qubit decay: V = sqrt(rate) sigma_-."""
    return JumpModel(
        h=np.zeros((2, 2), dtype=complex),
        jumps=[math.sqrt(rate) * pauli("minus")],
        shot_rates=[shot_rate],
        efficiency=np.array([[efficiency]]),
    )


@dataclass(frozen=True)
class MixedModel:
    """Diffusive channels and counters sharing one Hamiltonian (the diffusive
    model's, possibly time-dependent); the jump part's own h must be zero."""

    diffusive: DiffusiveModel
    jump: JumpModel

    def __post_init__(self):
        if self.diffusive.dim != self.jump.dim:
            raise ValidationError("diffusive and jump parts have different dimensions")
        if np.any(self.jump.h != 0):
            raise ValidationError(
                "the shared Hamiltonian lives in the diffusive part; set jump.h = 0"
            )

    @property
    def dim(self) -> int:
        return self.diffusive.dim


@dataclass(frozen=True)
class _JumpOps:
    """Precomputed per-step arrays for the jump branches."""

    m0: np.ndarray          # smooth no-click operator (jump-only models)
    vs: np.ndarray          # (nj, d, d)
    vdv: np.ndarray         # (nj, d, d) V†V
    rates: np.ndarray       # (nd,)
    eff: np.ndarray         # (nd, nj)
    col_eff: np.ndarray     # (nj,)
    dt: float


def _jump_ops(h: np.ndarray, model: JumpModel, dt: float) -> _JumpOps:
    vs = model.vs()
    d = model.dim
    if len(vs):
        vdv = np.einsum("mji,mjk->mik", vs.conj(), vs)
        vdv_sum = vdv.sum(axis=0)
    else:
        vdv = np.zeros((0, d, d), dtype=complex)
        vdv_sum = np.zeros((d, d), dtype=complex)
    m0 = np.eye(d, dtype=complex) - (1j * h + 0.5 * vdv_sum) * dt
    return _JumpOps(
        m0=m0,
        vs=vs,
        vdv=vdv,
        rates=model.shot_rates,
        eff=model.efficiency,
        col_eff=model.column_efficiencies(),
        dt=dt,
    )


def _click_probs(ops: _JumpOps, rho_b: np.ndarray) -> np.ndarray:
    """Per-detector click probabilities (B, nd) for stacked states."""
    if len(ops.vs):
        tr_v = np.einsum("mij,bji->bm", ops.vdv, rho_b).real
        tr_v = np.clip(tr_v, 0.0, None)
        rates = ops.rates[None, :] + tr_v @ ops.eff.T
    else:
        rates = np.broadcast_to(ops.rates, (rho_b.shape[0], len(ops.rates))).copy()
    return rates * ops.dt


def _click_posterior(ops: _JumpOps, rho_b: np.ndarray, mu: int) -> np.ndarray:
    """Unnormalized post-click state theta_bar rho + sum eta_bar V rho V†."""
    num = ops.rates[mu] * rho_b
    if len(ops.vs):
        num = num + weighted_sandwich_batch(ops.eff[mu], ops.vs, rho_b)
    return num


def _noclick_numerator(ops: _JumpOps, rho_b: np.ndarray) -> np.ndarray:
    num = conjugate_batch(ops.m0, rho_b)
    if len(ops.vs):
        w = (1.0 - ops.col_eff) * ops.dt
        num = num + weighted_sandwich_batch(w, ops.vs, rho_b)
    return num


def _resolve_jumps(ops: _JumpOps, rho_b, uniforms):
    """Categorical draw over {no-click, click-mu} per lane.

    Returns (dn (B, nd) int8, clicked mask, mu indices) and enforces the
    small-dt precondition on the total click probability.
    """
    p = _click_probs(ops, rho_b)
    total = p.sum(axis=1)
    worst = float(total.max()) if total.size else 0.0
    if worst > MAX_CLICK_PROB:
        raise NumericalGuardError(
            f"total click probability {worst:.3f} exceeds {MAX_CLICK_PROB} per step; "
            f"reduce dt"
        )
    clicked = uniforms < total
    nd = p.shape[1]
    dn = np.zeros((rho_b.shape[0], nd), dtype=np.int8)
    mu = np.zeros(rho_b.shape[0], dtype=np.int64)
    if clicked.any():
        cum = np.cumsum(p, axis=1)
        mu = (cum < uniforms[:, None]).sum(axis=1)
        np.clip(mu, 0, nd - 1, out=mu)
        dn[np.nonzero(clicked)[0], mu[clicked]] = 1
    return dn, clicked, mu


def jump_step(model: JumpModel, rho, dt: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """One fixed-grid step of the counting SME: (dN per detector, new state).

    On a click the state is replaced by the click posterior only (the smooth
    no-click update is not applied in the same step).
    """
    ops = _jump_ops(model.h, model, dt)
    rho_b = np.asarray(rho, dtype=complex)[None]
    dn, clicked, mu = _resolve_jumps(ops, rho_b, np.array([rng.random()]))
    if clicked[0]:
        out = renormalize_density(_click_posterior(ops, rho_b, int(mu[0])))
    else:
        out = renormalize_density(_noclick_numerator(ops, rho_b))
    return dn[0], out[0]


def mixed_step(
    model: MixedModel, rho, dt: float, rng, t: float = 0.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One step of the combined diffusive/counting SME: (dy, dN, new state).

    Click probabilities and the dy drift use the pre-click state; on a click
    the smooth M_dy update is applied to the click posterior.  Degenerate
    models delegate to the specialized steps.
    """
    diff = model.diffusive
    if model.jump.n_jumps == 0 and model.jump.n_detectors == 0:
        ops = build_step_operators(diff, t, dt)
        dy, out = diffusive_step(ops, diff, rho, rng)
        return dy, np.zeros(0, dtype=np.int8), out
    if diff.n_channels == 0:
        h = diff.hamiltonian(t)
        jmodel = JumpModel(
            h=h,
            jumps=model.jump.jumps,
            shot_rates=model.jump.shot_rates,
            efficiency=model.jump.efficiency,
        )
        dn, out = jump_step(jmodel, rho, dt, rng)
        return np.zeros(0), dn, out

    rho_b = np.asarray(rho, dtype=complex)[None]
    u = np.array([rng.random()])
    dw = math.sqrt(dt) * rng.standard_normal(diff.n_channels)
    dy, dn, out = _mixed_step_batch(model, t, dt, rho_b, u, dw[None])
    return dy[0], dn[0], out[0]


def _mixed_smooth_ops(model: MixedModel, t: float, dt: float):
    """Constant pieces of the mixed smooth update for one control value."""
    diff = model.diffusive
    h = diff.hamiltonian(t)
    ls = diff.ls()
    vs = model.jump.vs()
    d = diff.dim
    ldl = np.einsum("kji,kjl->il", ls.conj(), ls) if len(ls) else 0.0
    vdv = np.einsum("mji,mjl->il", vs.conj(), vs) if len(vs) else 0.0
    c0 = np.eye(d, dtype=complex) - (1j * h + 0.5 * ldl + 0.5 * vdv) * dt
    jops = _jump_ops(h, model.jump, dt)
    return c0, ls, diff.etas(), jops


def _mixed_step_batch(model, t, dt, rho_b, uniforms, dw_b):
    c0, ls, etas, jops = _mixed_smooth_ops(model, t, dt)
    return _mixed_step_core(c0, ls, etas, jops, dt, rho_b, uniforms, dw_b)


def _mixed_step_core(c0, ls, etas, jops, dt, rho_b, uniforms, dw_b):
    sqrt_eta = np.sqrt(etas)
    # output record from the pre-click state
    a_phys = ls + dagger(ls)
    tr = np.einsum("kij,bji->bk", a_phys, rho_b).real
    dy = tr * sqrt_eta[None, :] * dt + dw_b

    dn, clicked, mu = _resolve_jumps(jops, rho_b, uniforms)
    base = rho_b
    if clicked.any():
        base = rho_b.copy()
        for m in np.unique(mu[clicked]):
            lanes = clicked & (mu == m)
            post = _click_posterior(jops, rho_b[lanes], int(m))
            base[lanes] = renormalize_density(post)

    m_dy = c0[None] + np.einsum("bk,kij->bij", sqrt_eta[None, :] * dy, ls)
    num = sandwich_batch(m_dy, base)
    w_l = (1.0 - etas) * dt
    if np.any(w_l > 0):
        num = num + weighted_sandwich_batch(w_l, ls, base)
    if len(jops.vs):
        w_v = (1.0 - jops.col_eff) * dt
        num = num + weighted_sandwich_batch(w_v, jops.vs, base)
    return dy, dn, renormalize_density(num)


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


@dataclass
class JumpEnsembleResult:
    times: np.ndarray
    dn: np.ndarray | None                      # (ntraj, n_windows, nd) counts
    dy: np.ndarray | None                      # mixed runs only
    observables: dict[str, np.ndarray] | None
    obs_sum: dict[str, np.ndarray]
    obs_sumsq: dict[str, np.ndarray]
    rho_sum: np.ndarray | None
    final_rho: np.ndarray
    click_counts: np.ndarray                   # (ntraj, nd) totals
    first_click_step: np.ndarray               # (ntraj, nd), -1 if never
    ntraj: int


def _make_recorders(nlanes, nrec, observables, record_traces, record_rho_sum, d):
    obs_traces = (
        {name: np.empty((nlanes, nrec + 1)) for name in observables}
        if record_traces
        else None
    )
    obs_sum = {name: np.zeros(nrec + 1) for name in observables}
    obs_sumsq = {name: np.zeros(nrec + 1) for name in observables}
    rho_sum = np.zeros((nrec + 1, d, d), dtype=complex) if record_rho_sum else None

    def record_point(idx, rho_now):
        for name, fn in observables.items():
            vals = fn(rho_now)
            if obs_traces is not None:
                obs_traces[name][:, idx] = vals
            obs_sum[name][idx] += vals.sum()
            obs_sumsq[name][idx] += float(np.sum(vals * vals))
        if rho_sum is not None:
            rho_sum[idx] += rho_now.sum(axis=0)

    return obs_traces, obs_sum, obs_sumsq, rho_sum, record_point


def run_jump_ensemble(
    model: JumpModel,
    rho0,
    dt: float,
    nsteps: int,
    rngs,
    observables: dict | None = None,
    stride: int = 1,
    record_dn: bool = True,
    record_traces: bool = True,
    record_rho_sum: bool = False,
) -> JumpEnsembleResult:
    """Lockstep batch of counting trajectories (one uniform per lane per step)."""
    if nsteps % stride != 0:
        raise ValidationError("nsteps must be a multiple of stride")
    rho0 = np.asarray(rho0, dtype=complex)
    nlanes = len(rngs)
    d = rho0.shape[0]
    rho = np.broadcast_to(rho0, (nlanes, d, d)).copy()
    observables = observables or {}
    nd = model.n_detectors
    ops = _jump_ops(model.h, model, dt)

    nrec = nsteps // stride
    obs_traces, obs_sum, obs_sumsq, rho_sum, record_point = _make_recorders(
        nlanes, nrec, observables, record_traces, record_rho_sum, d
    )
    record_point(0, rho)
    dn_out = np.zeros((nlanes, nrec, nd), dtype=np.int32) if record_dn else None
    click_counts = np.zeros((nlanes, nd), dtype=np.int64)
    first_click = np.full((nlanes, nd), -1, dtype=np.int64)

    window = np.zeros((nlanes, nd), dtype=np.int32)
    step = 0
    rec = 0
    while step < nsteps:
        block = min(NOISE_BLOCK, nsteps - step)
        uniforms = np.stack([rng.random(block) for rng in rngs], axis=0)
        for j in range(block):
            dn, clicked, mu = _resolve_jumps(ops, rho, uniforms[:, j])
            out = _noclick_numerator(ops, rho)
            if clicked.any():
                for m in np.unique(mu[clicked]):
                    lanes = clicked & (mu == m)
                    out[lanes] = _click_posterior(ops, rho[lanes], int(m))
            rho = renormalize_density(out)

            window += dn
            newly = (dn == 1) & (first_click < 0)
            if newly.any():
                first_click[newly] = step + 1
            click_counts += dn
            step += 1
            if step % stride == 0:
                rec += 1
                if dn_out is not None:
                    dn_out[:, rec - 1] = window
                window = np.zeros((nlanes, nd), dtype=np.int32)
                record_point(rec, rho)

    times = np.arange(nrec + 1, dtype=float) * (stride * dt)
    return JumpEnsembleResult(
        times=times,
        dn=dn_out,
        dy=None,
        observables=obs_traces,
        obs_sum=obs_sum,
        obs_sumsq=obs_sumsq,
        rho_sum=rho_sum,
        final_rho=rho,
        click_counts=click_counts,
        first_click_step=first_click,
        ntraj=nlanes,
    )


def run_mixed_ensemble(
    model: MixedModel,
    rho0,
    dt: float,
    nsteps: int,
    rngs,
    t0: float = 0.0,
    observables: dict | None = None,
    stride: int = 1,
    record_dn: bool = True,
    record_dy: bool = True,
    record_traces: bool = True,
    record_rho_sum: bool = False,
) -> JumpEnsembleResult:
    """Lockstep batch of mixed trajectories.

    Per block each lane consumes uniforms (block,) then normals (block, k);
    see qsme.rng for the stream contract.  Degenerate models delegate to the
    diffusive/jump runners (and consume those runners' stream layouts).
    """
    diff = model.diffusive
    if model.jump.n_jumps == 0 and model.jump.n_detectors == 0:
        res = run_diffusive_ensemble(
            diff, rho0, dt, nsteps, rngs, t0=t0, observables=observables,
            stride=stride, record_dy=record_dy, record_traces=record_traces,
            record_rho_sum=record_rho_sum,
        )
        return JumpEnsembleResult(
            times=res.times, dn=None, dy=res.dy, observables=res.observables,
            obs_sum=res.obs_sum, obs_sumsq=res.obs_sumsq, rho_sum=res.rho_sum,
            final_rho=res.final_rho,
            click_counts=np.zeros((res.ntraj, 0), dtype=np.int64),
            first_click_step=np.full((res.ntraj, 0), -1, dtype=np.int64),
            ntraj=res.ntraj,
        )
    if diff.n_channels == 0 and diff.h1 is None:
        jmodel = JumpModel(
            h=diff.h0, jumps=model.jump.jumps,
            shot_rates=model.jump.shot_rates, efficiency=model.jump.efficiency,
        )
        res = run_jump_ensemble(
            jmodel, rho0, dt, nsteps, rngs, observables=observables, stride=stride,
            record_dn=record_dn, record_traces=record_traces,
            record_rho_sum=record_rho_sum,
        )
        return res

    if nsteps % stride != 0:
        raise ValidationError("nsteps must be a multiple of stride")
    rho0 = np.asarray(rho0, dtype=complex)
    nlanes = len(rngs)
    d = rho0.shape[0]
    rho = np.broadcast_to(rho0, (nlanes, d, d)).copy()
    observables = observables or {}
    k = diff.n_channels
    nd = model.jump.n_detectors

    nrec = nsteps // stride
    obs_traces, obs_sum, obs_sumsq, rho_sum, record_point = _make_recorders(
        nlanes, nrec, observables, record_traces, record_rho_sum, d
    )
    record_point(0, rho)
    dn_out = np.zeros((nlanes, nrec, nd), dtype=np.int32) if record_dn else None
    dy_out = np.zeros((nlanes, nrec, k)) if record_dy else None
    click_counts = np.zeros((nlanes, nd), dtype=np.int64)
    first_click = np.full((nlanes, nd), -1, dtype=np.int64)

    sqdt = math.sqrt(dt)
    u_prev = None
    smooth = None
    dn_window = np.zeros((nlanes, nd), dtype=np.int32)
    dy_window = np.zeros((nlanes, k))
    step = 0
    rec = 0
    while step < nsteps:
        block = min(NOISE_BLOCK, nsteps - step)
        uniforms = np.stack([rng.random(block) for rng in rngs], axis=0)
        normals = np.stack([rng.standard_normal((block, k)) for rng in rngs], axis=0)
        for j in range(block):
            t = t0 + step * dt
            u_now = diff.control_value(t)
            if smooth is None or u_now != u_prev:
                smooth = _mixed_smooth_ops(model, t, dt)
                u_prev = u_now
            c0, ls, etas, jops = smooth
            dy, dn, rho = _mixed_step_core(
                c0, ls, etas, jops, dt, rho, uniforms[:, j], sqdt * normals[:, j]
            )
            dn_window += dn
            dy_window += dy
            newly = (dn == 1) & (first_click < 0)
            if newly.any():
                first_click[newly] = step + 1
            click_counts += dn
            step += 1
            if step % stride == 0:
                rec += 1
                if dn_out is not None:
                    dn_out[:, rec - 1] = dn_window
                if dy_out is not None:
                    dy_out[:, rec - 1] = dy_window
                dn_window = np.zeros((nlanes, nd), dtype=np.int32)
                dy_window = np.zeros((nlanes, k))
                record_point(rec, rho)

    times = t0 + np.arange(nrec + 1, dtype=float) * (stride * dt)
    return JumpEnsembleResult(
        times=times,
        dn=dn_out,
        dy=dy_out,
        observables=obs_traces,
        obs_sum=obs_sum,
        obs_sumsq=obs_sumsq,
        rho_sum=rho_sum,
        final_rho=rho,
        click_counts=click_counts,
        first_click_step=first_click,
        ntraj=nlanes,
    )


def run_jump(model: JumpModel, rho0, dt, tmax, rng, observables=None, stride=1) -> TrajectoryRecord:
    nsteps = steps_for(dt, tmax)
    res = run_jump_ensemble(
        model, rho0, dt, nsteps, [rng], observables=observables, stride=stride
    )
    return TrajectoryRecord(
        times=res.times,
        dn=res.dn[0] if res.dn is not None else None,
        observables={k: v[0] for k, v in (res.observables or {}).items()},
    )


def run_mixed(model: MixedModel, rho0, dt, tmax, rng, observables=None, stride=1) -> TrajectoryRecord:
    nsteps = steps_for(dt, tmax)
    res = run_mixed_ensemble(
        model, rho0, dt, nsteps, [rng], observables=observables, stride=stride
    )
    return TrajectoryRecord(
        times=res.times,
        dy=res.dy[0] if res.dy is not None else None,
        dn=res.dn[0] if res.dn is not None else None,
        observables={k: v[0] for k, v in (res.observables or {}).items()},
    )


# ---------------------------------------------------------------------------
# Discrete-to-continuous consistency check
# ---------------------------------------------------------------------------


@dataclass
class ClickCountComparison:
    """Click-count statistics of the discrete resonant-probe chain against the
    jump SME on a matched grid (probe angle theta, sin^2 theta = dt)."""

    theta: float
    dt: float
    t_total: float
    counts_discrete: np.ndarray
    counts_jump: np.ndarray
    tv_distance: float
    mean_discrete: float
    mean_jump: float
    expected_clicks: float


def total_variation(counts_a: np.ndarray, counts_b: np.ndarray) -> float:
    """TV distance between two empirical integer-count distributions."""
    hi = int(max(counts_a.max(initial=0), counts_b.max(initial=0)))
    pa = np.bincount(counts_a, minlength=hi + 1) / max(len(counts_a), 1)
    pb = np.bincount(counts_b, minlength=hi + 1) / max(len(counts_b), 1)
    return 0.5 * float(np.abs(pa - pb).sum())


def resonant_discrete_to_jump_check(
    theta: float,
    nsteps: int,
    ntraj: int = 4000,
    seed: int = 2024,
    shot_rate: float = 0.0,
    efficiency: float = 1.0,
) -> ClickCountComparison:
    """Run the discrete resonant-probe qubit chain and the jump SME with
    sin^2(theta) = dt on matched grids; compare click-count distributions."""
    from .channels import counting_errors, partition, resonant_qubit_channel
    from .rng import trajectory_rngs

    dt = math.sin(theta) ** 2
    rho0 = pure_density(np.array([0.0, 1.0]))  # |e>
    if dt == 0.0:
        zeros = np.zeros(ntraj, dtype=np.int64)
        return ClickCountComparison(
            theta=theta, dt=0.0, t_total=0.0,
            counts_discrete=zeros, counts_jump=zeros.copy(),
            tv_distance=0.0, mean_discrete=0.0, mean_jump=0.0, expected_clicks=0.0,
        )

    chain = partition(
        resonant_qubit_channel(theta), counting_errors(shot_rate * dt, efficiency)
    )
    from .channels import run_discrete_ensemble

    disc = run_discrete_ensemble(
        chain, rho0, nsteps, trajectory_rngs(seed, range(ntraj)), record_outcomes=True
    )
    counts_disc = disc.outcomes.astype(np.int64).sum(axis=1)

    jmodel = qubit_decay_model(shot_rate=shot_rate, efficiency=efficiency)
    jump_res = run_jump_ensemble(
        jmodel, rho0, dt, nsteps,
        trajectory_rngs(seed + 1, range(ntraj)),
        record_dn=False, record_traces=False,
    )
    counts_jump = jump_res.click_counts[:, 0]

    t_total = nsteps * dt
    expected = efficiency * (1.0 - math.exp(-t_total)) + shot_rate * t_total
    return ClickCountComparison(
        theta=theta,
        dt=dt,
        t_total=t_total,
        counts_discrete=counts_disc,
        counts_jump=counts_jump,
        tv_distance=total_variation(counts_disc, counts_jump),
        mean_discrete=float(counts_disc.mean()),
        mean_jump=float(counts_jump.mean()),
        expected_clicks=expected,
    )
