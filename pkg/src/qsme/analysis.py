"""Reference propagation, conditional-expectation verification, ensemble
aggregation, and state metrics.

The deterministic reference uses the same measurement-normalized Kraus scheme
as the stochastic integrator with every efficiency set to zero (equivalently,
the outcome-averaged map), so it is positivity and trace preserving for any
admissible dt and first-order accurate in dt.

Conditional expectations E[f(rho')|rho] are computed exactly: by outcome
enumeration for finite channels and by Gauss-Hermite quadrature against the
true outcome density for continuous records.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffusive import (
    DiffusiveModel,
    DiffusiveStepOperators,
    build_step_operators,
    diffusive_update_numerator,
    steps_for,
)
from .errors import ValidationError
from .linalg import hermitize
from .records import TrajectoryRecord
from .systems import pauli, renormalize_density

_SX = pauli("x")
_SY = pauli("y")
_SZ = pauli("z")


# ---------------------------------------------------------------------------
# State metrics (all accept stacked states, lanes first)
# ---------------------------------------------------------------------------


def populations(rho) -> np.ndarray:
    return np.einsum("...ii->...i", np.asarray(rho, dtype=complex)).real


def fock_population(rho, n: int) -> float | np.ndarray:
    p = populations(rho)[..., n]
    return float(p) if np.ndim(p) == 0 else p


def bloch_vector(rho) -> np.ndarray:
    """(Tr sx rho, Tr sy rho, Tr sz rho); shape (..., 3) for stacked input."""
    rho = np.asarray(rho, dtype=complex)
    comps = [np.einsum("ij,...ji->...", s, rho).real for s in (_SX, _SY, _SZ)]
    return np.stack(comps, axis=-1)


def purity(rho) -> float | np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    val = np.einsum("...ij,...ji->...", rho, rho).real
    return float(val) if np.ndim(val) == 0 else val


def mean_occupation(rho) -> float | np.ndarray:
    """Tr(n rho) on a Fock-basis space (diagonal weight 0..d-1)."""
    p = populations(rho)
    val = np.einsum("...i,i->...", p, np.arange(p.shape[-1], dtype=float))
    return float(val) if np.ndim(val) == 0 else val


def trace_distance(a, b) -> float:
    """(1/2) sum |eigenvalues of a - b| for Hermitian a, b."""
    diff = hermitize(np.asarray(a, dtype=complex) - np.asarray(b, dtype=complex))
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


# Observable factories for the ensemble runners (batched (B,d,d) -> (B,)).


def obs_bloch(axis: str) -> Callable:
    s = pauli(axis)
    return lambda rho_b: np.einsum("ij,bji->b", s, rho_b).real


def obs_population(idx: int) -> Callable:
    return lambda rho_b: populations(rho_b)[:, idx]


def obs_purity(rho_b) -> np.ndarray:
    return purity(rho_b)


def obs_mean_occupation(rho_b) -> np.ndarray:
    return mean_occupation(rho_b)


def obs_max_population(rho_b) -> np.ndarray:
    return populations(rho_b).max(axis=-1)


# ---------------------------------------------------------------------------
# Lyapunov functionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LyapunovSpec:
    """Non-negative state functional with an optional predicted contraction:
    a factor per measurement round (kind="factor") or an exponential decay
    rate per unit time (kind="rate")."""

    name: str
    evaluator: Callable
    predicted_contraction: float | None = None
    kind: str | None = None


def _qnd_fock_value(rho_b) -> np.ndarray:
    p = np.clip(populations(rho_b), 0.0, None)
    root_sum = np.sqrt(p).sum(axis=-1)
    return 0.5 * np.clip(root_sum * root_sum - p.sum(axis=-1), 0.0, None)


def _qubit_coherence_value(rho_b) -> np.ndarray:
    p = np.clip(populations(rho_b), 0.0, None)
    return np.sqrt(p[..., 0] * p[..., 1])


def _bloch_z_value(rho_b) -> np.ndarray:
    z = np.einsum("ij,...ji->...", _SZ, np.asarray(rho_b, dtype=complex)).real
    return np.sqrt(np.clip(1.0 - z * z, 0.0, None))


def qnd_contraction_factor(theta: float, nmax: int) -> float:
    """max over 0 <= n1 < n2 <= nmax of |cos(theta (n1 ± n2))|."""
    best = 0.0
    for n1 in range(nmax):
        for n2 in range(n1 + 1, nmax + 1):
            best = max(
                best,
                abs(math.cos(theta * (n2 - n1))),
                abs(math.cos(theta * (n1 + n2))),
            )
    return best


def qnd_fock_lyapunov(theta: float | None = None, nmax: int | None = None) -> LyapunovSpec:
    """Pairwise population root-product sum; zero exactly on Fock states."""
    factor = None
    kind = None
    if theta is not None and nmax is not None:
        factor = qnd_contraction_factor(theta, nmax)
        kind = "factor"
    return LyapunovSpec("qnd_fock", _qnd_fock_value, factor, kind)


def photon_number_lyapunov() -> LyapunovSpec:
    """Mean occupation Tr(n rho); zero exactly on the vacuum."""
    return LyapunovSpec("photon_number", mean_occupation)


def qubit_coherence_lyapunov(contraction: float | None = None) -> LyapunovSpec:
    """sqrt(<g|rho|g><e|rho|e|>); zero exactly on the sigma_z eigenstates."""
    kind = "factor" if contraction is not None else None
    return LyapunovSpec("qubit_coherence", _qubit_coherence_value, contraction, kind)


def bloch_z_lyapunov(rate: float | None = None) -> LyapunovSpec:
    """sqrt(1 - Tr(sigma_z rho)^2); zero exactly on the sigma_z eigenstates."""
    kind = "rate" if rate is not None else None
    return LyapunovSpec("bloch_z", _bloch_z_value, rate, kind)


# ---------------------------------------------------------------------------
# Conditional-expectation checks
# ---------------------------------------------------------------------------


@dataclass
class MartingaleReport:
    """E[V(rho')|rho] against V(rho) and an optional prediction."""

    v_before: float
    ev_after: float
    predicted_ev: float | None = None

    @property
    def ratio(self) -> float:
        return self.ev_after / self.v_before if self.v_before else float("nan")

    @property
    def decrement(self) -> float:
        return self.v_before - self.ev_after

    @property
    def prediction_residual(self) -> float | None:
        if self.predicted_ev is None:
            return None
        return abs(self.ev_after - self.predicted_ev)


def expectation_over_outcomes(outcomes, fn) -> float:
    return float(sum(w * float(fn(r)) for w, r in outcomes))


def martingale_check(outcomes, rho, lyap: LyapunovSpec) -> MartingaleReport:
    """outcomes: exact outcome law [(weight, posterior)] from channel
    enumeration or quadrature (see channels.channel_outcomes,
    channels.meter_outcomes, analysis.diffusive_outcomes)."""
    v0 = float(lyap.evaluator(np.asarray(rho, dtype=complex)))
    ev = expectation_over_outcomes(outcomes, lyap.evaluator)
    predicted = None
    if lyap.predicted_contraction is not None and lyap.kind == "factor":
        predicted = lyap.predicted_contraction * v0
    return MartingaleReport(v_before=v0, ev_after=ev, predicted_ev=predicted)


def diffusive_outcomes(
    ops: DiffusiveStepOperators, rho, order: int = 15
) -> list[tuple[float, np.ndarray]]:
    """Quadrature representation of the diffusive outcome law.

    dy = s sqrt(dt) with density Tr{numerator(s)} prod phi(s_nu); nodes are a
    tensor Gauss-Hermite grid, weights Tr{numerator} w / sqrt(pi)^k.  The
    weights sum to 1 exactly (the density's polynomial part is quadratic).
    """
    k = ops.n_channels
    rho = np.asarray(rho, dtype=complex)
    if k == 0:
        num = diffusive_update_numerator(ops, rho[None], np.zeros((1, 0)))[0]
        return [(float(np.trace(num).real), renormalize_density(num))]
    x, w = np.polynomial.hermite.hermgauss(order)
    out = []
    sqdt = math.sqrt(ops.dt)
    for idx in itertools.product(range(order), repeat=k):
        s = math.sqrt(2.0) * x[list(idx)]
        gauss_w = float(np.prod(w[list(idx)])) / math.pi ** (0.5 * k)
        num = diffusive_update_numerator(ops, rho[None], (s * sqdt)[None])[0]
        tr = float(np.trace(num).real)
        out.append((tr * gauss_w, renormalize_density(num)))
    return out


# ---------------------------------------------------------------------------
# Deterministic reference (outcome-averaged propagation)
# ---------------------------------------------------------------------------


def unread(model: DiffusiveModel) -> DiffusiveModel:
    """Copy of the model with every channel efficiency set to zero."""
    return DiffusiveModel(
        h0=model.h0,
        channels=[(op, 0.0) for op, _ in model.channels],
        h1=model.h1,
        control=model.control,
    )


def decoherence_model(h, ops) -> DiffusiveModel:
    """Deterministic reference model for arbitrary channel operators."""
    return DiffusiveModel(h0=h, channels=[(op, 0.0) for op in ops])


def lindblad_step(
    model: DiffusiveModel, rho, dt: float, t: float = 0.0,
    ops: DiffusiveStepOperators | None = None,
) -> np.ndarray:
    """One deterministic positivity/trace-preserving step of the ensemble map."""
    if ops is None:
        ops = build_step_operators(unread(model), t, dt)
    rho_b = np.asarray(rho, dtype=complex)[None]
    num = diffusive_update_numerator(ops, rho_b, np.zeros((1, ops.n_channels)))
    return renormalize_density(num)[0]


def lindblad_propagate(
    model: DiffusiveModel, rho0, dt: float, tmax: float, stride: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic trajectory on the recording grid; returns (times, states)."""
    nsteps = steps_for(dt, tmax)
    if nsteps % stride != 0:
        raise ValidationError("nsteps must be a multiple of stride")
    base = unread(model)
    rho = np.asarray(rho0, dtype=complex)
    times = np.arange(nsteps // stride + 1, dtype=float) * (stride * dt)
    out = np.empty((len(times), rho.shape[0], rho.shape[1]), dtype=complex)
    out[0] = rho
    ops = None
    u_prev = None
    for step in range(nsteps):
        t = step * dt
        u_now = base.control_value(t)
        if ops is None or u_now != u_prev:
            ops = build_step_operators(base, t, dt)
            u_prev = u_now
        rho = lindblad_step(base, rho, dt, t, ops=ops)
        if (step + 1) % stride == 0:
            out[(step + 1) // stride] = rho
    return times, out


# ---------------------------------------------------------------------------
# Ensemble aggregation
# ---------------------------------------------------------------------------


@dataclass
class EnsembleStats:
    """Pointwise means and standard errors of observables over trajectories."""

    times: np.ndarray
    means: dict[str, np.ndarray]
    stderrs: dict[str, np.ndarray]
    ntraj: int


def ensemble_average(records: list[TrajectoryRecord]) -> EnsembleStats:
    if not records:
        raise ValidationError("cannot average an empty trajectory set")
    times = records[0].times
    names = list(records[0].observables)
    means = {}
    stderrs = {}
    n = len(records)
    for name in names:
        stacked = np.stack([r.observables[name] for r in records])
        means[name] = stacked.mean(axis=0)
        if n > 1:
            stderrs[name] = stacked.std(axis=0, ddof=1) / math.sqrt(n)
        else:
            stderrs[name] = np.zeros_like(means[name])
    return EnsembleStats(times=times, means=means, stderrs=stderrs, ntraj=n)


def stats_from_sums(times, obs_sum, obs_sumsq, ntraj: int) -> EnsembleStats:
    """Assemble EnsembleStats from running sums (unbiased sample variance)."""
    means = {}
    stderrs = {}
    for name, s in obs_sum.items():
        mean = s / ntraj
        means[name] = mean
        if ntraj > 1:
            var = (obs_sumsq[name] - ntraj * mean * mean) / (ntraj - 1)
            stderrs[name] = np.sqrt(np.clip(var, 0.0, None) / ntraj)
        else:
            stderrs[name] = np.zeros_like(mean)
    return EnsembleStats(times=times, means=means, stderrs=stderrs, ntraj=ntraj)
