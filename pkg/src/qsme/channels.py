"""Discrete-time stochastic master equations.

A measurement round is a Kraus channel {M_mu} (sum M†M = I) together with a
left-stochastic imperfection matrix eta mapping true outcomes mu to detector
outcomes y.  The partial maps K_y(rho) = sum_mu eta[y,mu] M_mu rho M_mu† give
the detector-outcome probabilities Tr K_y(rho) and the Bayes state update
K_y(rho)/Tr K_y(rho).

Concrete channels built here:
  * qnd_channel           photon number probed dispersively by a qubit,
                          M_g = cos(theta n), M_e = sin(theta n);
  * resonant_channel      photon probed by a resonant qubit,
                          M_g = cos(theta sqrt(n)), M_e = a sin(theta sqrt(n))/sqrt(n);
  * resonant_qubit_channel  qubit probed by a vacuum photon mode,
                          M_0 = |g><g| + cos(theta)|e><e|, M_1 = sin(theta) sigma_-;
  * GaussianMeter         qubit probed dispersively by a coherent field whose
                          quadrature is read out: a continuous outcome y drawn
                          from a two-Gaussian mixture, with optional Gaussian
                          detection noise of variance parameter sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalGuardError, ValidationError
from .linalg import dagger, frobenius
from .rng import NOISE_BLOCK
from .systems import FockSpace, pauli, renormalize_density, sin_over_sqrt

COMPLETENESS_TOL = 1e-10
PROB_EPS = 1e-14  # clip for tiny negative rounding in outcome probabilities


def _clip_probs(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    p = np.where((p < 0) & (p > -PROB_EPS), 0.0, p)
    if np.any(p < 0):
        raise ValidationError(f"negative outcome probability: {p.min():.3e}")
    return p


@dataclass(frozen=True)
class KrausChannel:
    """Finite Kraus family {M_mu} with sum_mu M_mu† M_mu = I."""

    ops: np.ndarray
    labels: tuple[str, ...] = ()
    # Optional boolean mask of basis states on which completeness is required
    # (used when a truncation defect has been registered for a channel built
    # from a cut-off propagator).
    validity_mask: np.ndarray | None = None

    def __post_init__(self):
        ops = np.asarray(self.ops, dtype=complex)
        if ops.ndim != 3 or ops.shape[1] != ops.shape[2]:
            raise ValidationError(f"expected stacked square operators, got {ops.shape}")
        object.__setattr__(self, "ops", ops)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(len(ops))))
        if len(self.labels) != len(ops):
            raise ValidationError("labels length does not match operator count")
        res = self.completeness_residual()
        if res > COMPLETENESS_TOL:
            raise ValidationError(f"Kraus completeness residual {res:.3e} > {COMPLETENESS_TOL}")

    @property
    def dim(self) -> int:
        return self.ops.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.ops.shape[0]

    def completeness_residual(self) -> float:
        total = np.einsum("mji,mjk->ik", self.ops.conj(), self.ops)
        diff = total - np.eye(self.dim)
        if self.validity_mask is not None:
            mask = np.asarray(self.validity_mask, dtype=bool)
            diff = diff[np.ix_(mask, mask)]
        return frobenius(diff)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Unconditional (outcome-averaged) channel sum_mu M rho M†."""
        mr = np.einsum("mij,...jk->m...ik", self.ops, rho)
        return np.einsum("m...ik,mlk->...il", mr, self.ops.conj())

    def outcome_probs(self, rho: np.ndarray) -> np.ndarray:
        tr = np.einsum("mij,...ji->...m", self._mdag_m(), rho).real
        return _clip_probs(tr)

    def _mdag_m(self) -> np.ndarray:
        return np.einsum("mji,mjk->mik", self.ops.conj(), self.ops)


@dataclass(frozen=True)
class LeftStochasticMatrix:
    """Column-normalized non-negative matrix: rows = detector outcomes y,
    columns = true outcomes mu."""

    eta: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        if eta.ndim != 2:
            raise ValidationError("eta must be a matrix")
        if np.any(eta < -1e-12) or np.any(eta > 1 + 1e-12):
            raise ValidationError("eta entries must lie in [0, 1]")
        cols = eta.sum(axis=0)
        if np.any(np.abs(cols - 1.0) > 1e-12):
            raise ValidationError(f"eta columns must sum to 1 (got {cols})")
        object.__setattr__(self, "eta", np.clip(eta, 0.0, 1.0))

    @property
    def n_detector(self) -> int:
        return self.eta.shape[0]

    @property
    def n_true(self) -> int:
        return self.eta.shape[1]


def identity_errors(n: int) -> LeftStochasticMatrix:
    return LeftStochasticMatrix(np.eye(n))


def symmetric_errors(rate: float) -> LeftStochasticMatrix:
    """Two-outcome detector flipping each outcome with the same probability."""
    if not 0.0 <= rate <= 1.0:
        raise ValidationError("error rate must lie in [0, 1]")
    return LeftStochasticMatrix(np.array([[1 - rate, rate], [rate, 1 - rate]]))


def counting_errors(p_dark: float, efficiency: float) -> LeftStochasticMatrix:
    """Two-outcome counter: dark-count probability p_dark per round, detection
    probability `efficiency` for a true event."""
    if not 0.0 <= p_dark <= 1.0 or not 0.0 <= efficiency <= 1.0:
        raise ValidationError("p_dark and efficiency must lie in [0, 1]")
    return LeftStochasticMatrix(
        np.array([[1 - p_dark, 1 - efficiency], [p_dark, efficiency]])
    )


@dataclass(frozen=True)
class PartitionedChannel:
    """Kraus channel combined with a left-stochastic detector-imperfection matrix."""

    channel: KrausChannel
    eta: LeftStochasticMatrix

    def __post_init__(self):
        if self.eta.n_true != self.channel.n_outcomes:
            raise ValidationError(
                f"eta has {self.eta.n_true} true-outcome columns but the channel "
                f"has {self.channel.n_outcomes} operators"
            )

    @property
    def n_outcomes(self) -> int:
        return self.eta.n_detector

    def outcome_probs(self, rho: np.ndarray) -> np.ndarray:
        """P(y | rho) = Tr K_y(rho); supports stacked rho."""
        true_probs = self.channel.outcome_probs(rho)
        return _clip_probs(true_probs @ self.eta.eta.T)

    def partial_map(self, rho: np.ndarray, y: int) -> np.ndarray:
        """Unnormalized K_y(rho) = sum_mu eta[y,mu] M_mu rho M_mu†."""
        w = self.eta.eta[y]
        ops = self.channel.ops
        mr = np.einsum("mij,...jk->m...ik", ops, rho)
        mrm = np.einsum("m...ik,mlk->m...il", mr, ops.conj())
        return np.einsum("m,m...il->...il", w, mrm)

    def bayes_update(self, rho: np.ndarray, y: int) -> np.ndarray:
        return renormalize_density(self.partial_map(rho, y))


def partition(channel: KrausChannel, eta: LeftStochasticMatrix) -> PartitionedChannel:
    return PartitionedChannel(channel=channel, eta=eta)


def perfect(channel: KrausChannel) -> PartitionedChannel:
    return partition(channel, identity_errors(channel.n_outcomes))


def qnd_channel(theta: float, space: FockSpace) -> KrausChannel:
    """Photon-number readout through a dispersively coupled qubit probe."""
    n = np.arange(space.dim, dtype=float)
    mg = np.diag(np.cos(theta * n)).astype(complex)
    me = np.diag(np.sin(theta * n)).astype(complex)
    return KrausChannel(ops=np.stack([mg, me]), labels=("g", "e"))


def resonant_channel(theta: float, space: FockSpace) -> KrausChannel:
    """Photon readout through a resonant qubit probe prepared in |g>.

    M_g = cos(theta sqrt(n)); M_e = a sin(theta sqrt(n))/sqrt(n).  The lowering
    structure keeps completeness exact on the truncated space.
    """
    n = np.arange(space.dim, dtype=float)
    mg = np.diag(np.cos(theta * np.sqrt(n))).astype(complex)
    me = space.annihilation() @ np.diag(sin_over_sqrt(theta, n)).astype(complex)
    return KrausChannel(ops=np.stack([mg, me]), labels=("g", "e"))


def resonant_qubit_channel(theta: float) -> KrausChannel:
    """Qubit probed by a resonant vacuum photon mode, photon number measured.

    M_0 = |g><g| + cos(theta)|e><e|  (no photon detected),
    M_1 = sin(theta) sigma_-          (one photon detected).
    """
    m0 = np.diag([1.0, math.cos(theta)]).astype(complex)
    m1 = math.sin(theta) * pauli("minus")
    return KrausChannel(ops=np.stack([m0, m1]), labels=("0", "1"))


def projective_measure(rho, projectors, rng) -> tuple[int, np.ndarray]:
    """Projective measurement: outcome mu with probability Tr(rho P_mu),
    post-state P rho P / Tr(rho P).

    Projectors must be orthogonal and complete.  Outcomes whose probability is
    below the degeneracy threshold are dropped and the draw is taken from the
    renormalized remainder.
    """
    projs = [np.asarray(p, dtype=complex) for p in projectors]
    dim = projs[0].shape[0]
    total = sum(projs)
    if frobenius(total - np.eye(dim)) > COMPLETENESS_TOL:
        raise ValidationError("projectors are not complete")
    for i, p in enumerate(projs):
        if frobenius(p @ p - p) > COMPLETENESS_TOL:
            raise ValidationError(f"projector {i} is not idempotent")
        for q in projs[i + 1 :]:
            if frobenius(p @ q) > COMPLETENESS_TOL:
                raise ValidationError("projectors are not mutually orthogonal")
    probs = _clip_probs([float(np.trace(rho @ p).real) for p in projs])
    probs = np.where(probs < PROB_EPS, 0.0, probs)
    s = probs.sum()
    if s <= 0:
        raise NumericalGuardError("all projective outcome probabilities are degenerate")
    outcome = int(np.searchsorted(np.cumsum(probs / s), rng.random(), side="right"))
    outcome = min(outcome, len(projs) - 1)
    p = projs[outcome]
    return outcome, renormalize_density(p @ rho @ p)


def discrete_step(pc: PartitionedChannel, rho, rng) -> tuple[int, np.ndarray]:
    """One measurement round: draw y from Tr K_y(rho), Bayes-update the state."""
    probs = pc.outcome_probs(rho)
    s = probs.sum()
    if s < PROB_EPS:
        raise NumericalGuardError("all outcome probabilities below threshold (invalid channel)")
    y = int(np.searchsorted(np.cumsum(probs / s), rng.random(), side="right"))
    y = min(y, pc.n_outcomes - 1)
    return y, pc.bayes_update(rho, y)


def channel_outcomes(pc: PartitionedChannel, rho) -> list[tuple[float, np.ndarray]]:
    """Exact outcome law [(P(y), rho_y)] for conditional-expectation checks."""
    out = []
    for y in range(pc.n_outcomes):
        num = pc.partial_map(rho, y)
        p = float(np.trace(num).real)
        if p <= PROB_EPS:
            continue
        out.append((p, renormalize_density(num)))
    return out


# ---------------------------------------------------------------------------
# Gaussian meter: qubit measured through a coherent probe quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianMeter:
    """Continuous-outcome qubit measurement.

    A coherent probe of amplitude scale `alpha` picks up a conditional phase
    ±theta and its quadrature is read out, so the outcome density is the
    two-Gaussian mixture

        p(y) = N(y; +eps, v) <g|rho|g> + N(y; -eps, v) <e|rho|e>,

    with eps = alpha sin(theta) and v = (1 + sigma)/2, where sigma >= 0 is the
    detector's Gaussian noise variance parameter (sigma = 0: perfect
    detection).  The state update for sigma > 0 mixes the perfect-outcome
    Kraus operators against the detection-noise kernel:

        gg' ∝ exp(-(y-eps)^2/(1+sigma)) gg
        ee' ∝ exp(-(y+eps)^2/(1+sigma)) ee
        ge' ∝ exp(-y^2/(1+sigma) - eps^2) ge
    """

    alpha: float
    theta: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValidationError("alpha must be non-negative")
        if self.sigma < 0:
            raise ValidationError("sigma must be non-negative")

    @property
    def shift(self) -> float:
        """Outcome-mean offset eps = alpha sin(theta)."""
        return self.alpha * math.sin(self.theta)

    @property
    def variance(self) -> float:
        """Variance of each mixture component, (1 + sigma)/2."""
        return 0.5 * (1.0 + self.sigma)

    def kraus_at(self, y: float) -> np.ndarray:
        """Perfect-detection Kraus operator M_y (diagonal in |g>, |e>)."""
        eps = self.shift
        pref = math.pi ** (-0.25)
        return np.diag(
            [
                pref * math.exp(-0.5 * (y - eps) ** 2),
                pref * math.exp(-0.5 * (y + eps) ** 2),
            ]
        ).astype(complex)

    def mixture(self, rho) -> tuple[np.ndarray, np.ndarray]:
        """(weights, means) of the outcome mixture for state rho."""
        rho = np.asarray(rho, dtype=complex)
        pg = float(rho[0, 0].real)
        pe = float(rho[1, 1].real)
        w = _clip_probs([pg, pe])
        w = w / w.sum()
        eps = self.shift
        return w, np.array([+eps, -eps])

    def pdf(self, rho, y) -> np.ndarray:
        """Outcome probability density Tr K_y(rho) (vectorized over y)."""
        y = np.asarray(y, dtype=float)
        w, means = self.mixture(rho)
        v = self.variance
        norm = 1.0 / math.sqrt(2 * math.pi * v)
        return sum(
            wi * norm * np.exp(-((y - mi) ** 2) / (2 * v)) for wi, mi in zip(w, means)
        )

    def posterior(self, rho, y: float) -> np.ndarray:
        """Normalized state after observing outcome y (valid for sigma >= 0)."""
        rho = np.asarray(rho, dtype=complex)
        eps = self.shift
        one = 1.0 + self.sigma
        # Common factor exp(-y^2/(1+sigma)) is dropped; it cancels in the
        # normalization and avoids underflow at large |y|.
        fgg = math.exp((2 * y * eps - eps * eps) / one)
        fee = math.exp((-2 * y * eps - eps * eps) / one)
        fge = math.exp(-eps * eps)
        num = np.array(
            [
                [fgg * rho[0, 0], fge * rho[0, 1]],
                [fge * rho[1, 0], fee * rho[1, 1]],
            ],
            dtype=complex,
        )
        return renormalize_density(num)

    def sample_outcome(self, rho, rng) -> float:
        """Draw y from the exact two-Gaussian mixture (one uniform + one normal)."""
        w, means = self.mixture(rho)
        comp = 0 if rng.random() < w[0] else 1
        return float(means[comp] + math.sqrt(self.variance) * rng.standard_normal())


def gaussian_meter_sample(m: GaussianMeter, rho, rng) -> tuple[float, np.ndarray]:
    """Perfect-detection measurement round (requires sigma = 0): sample y from
    the outcome mixture and update through M_y."""
    if m.sigma != 0.0:
        raise ValidationError("gaussian_meter_sample requires sigma = 0")
    y = m.sample_outcome(rho, rng)
    return y, m.posterior(rho, y)


def gaussian_meter_imperfect_step(m: GaussianMeter, rho, rng) -> tuple[float, np.ndarray]:
    """Noisy-detection measurement round: sample y from the widened mixture
    (variance (1+sigma)/2) and apply the Bayes update K_y(rho)/Tr K_y(rho)."""
    y = m.sample_outcome(rho, rng)
    return y, m.posterior(rho, y)


def meter_outcomes(m: GaussianMeter, rho, order: int = 15) -> list[tuple[float, np.ndarray]]:
    """Quadrature representation of the outcome law: weighted posteriors
    [(w_i, rho_i)] with sum w_i = 1, one shifted Gauss–Hermite grid per
    mixture component."""
    x, w = np.polynomial.hermite.hermgauss(order)
    comp_w, means = m.mixture(rho)
    scale = math.sqrt(2.0 * m.variance)
    out = []
    for cw, mean in zip(comp_w, means):
        if cw <= 0:
            continue
        for xi, wi in zip(x, w):
            y = mean + scale * xi
            out.append((cw * wi / math.sqrt(math.pi), m.posterior(rho, y)))
    return out


def meter_completeness_residual(m: GaussianMeter, order: int = 15) -> float:
    """|| ∫ M_y† M_y dy − I || by shifted Gauss–Hermite quadrature.

    Each diagonal profile of M_y†M_y is a unit-normalized Gaussian centered at
    ±eps; integrating each against its own shifted grid checks the prefactor
    and exponent scalings of the Kraus family.
    """
    x, w = np.polynomial.hermite.hermgauss(order)
    eps = m.shift
    acc = np.zeros((2, 2))
    for center, idx in ((+eps, 0), (-eps, 1)):
        vals = np.array(
            [(dagger(mk) @ mk)[idx, idx].real for mk in (m.kraus_at(center + xi) for xi in x)]
        )
        acc[idx, idx] = float(np.sum(w * vals * np.exp(x**2)))
    return frobenius(acc - np.eye(2))


# ---------------------------------------------------------------------------
# Vectorized ensemble runners (trajectories in lockstep lanes)
# ---------------------------------------------------------------------------


@dataclass
class DiscreteEnsembleResult:
    """Batch of discrete-channel trajectories.

    times includes the initial point (t = step index); outcome/record arrays
    cover steps 1..nsteps.
    """

    times: np.ndarray
    outcomes: np.ndarray | None          # (ntraj, nsteps) int8 detector outcomes
    observables: dict[str, np.ndarray]   # name -> (ntraj, n_recorded) incl. t=0
    final_rho: np.ndarray                # (ntraj, d, d)
    first_converged: np.ndarray | None   # step of pointer-state lock-in, -1 if none
    converged_level: np.ndarray | None   # basis index of the lock-in population


def run_discrete_ensemble(
    pc: PartitionedChannel,
    rho0,
    nsteps: int,
    rngs,
    observables: dict | None = None,
    stride: int = 1,
    record_outcomes: bool = True,
    convergence_threshold: float | None = None,
    stop_when_converged: bool = False,
) -> DiscreteEnsembleResult:
    """Run one measurement round per step for a batch of trajectories.

    Each lane draws one uniform per step from its own generator (blocked in
    NOISE_BLOCK chunks; see qsme.rng).  `observables` maps names to callables
    acting on stacked states (B, d, d) -> (B,).  With a convergence_threshold,
    the first step at which any diagonal population exceeds the threshold is
    recorded per lane together with the basis index that locked in; with
    stop_when_converged the run ends early (record arrays truncated) once
    every lane has locked in.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    nlanes = len(rngs)
    d = rho0.shape[0]
    rho = np.broadcast_to(rho0, (nlanes, d, d)).copy()
    observables = observables or {}

    eta = pc.eta.eta
    ops = pc.channel.ops
    mdag_m = pc.channel._mdag_m()
    ops_dag = ops.conj().swapaxes(1, 2)
    # Diagonal Kraus families (number-basis readouts) update elementwise:
    # M rho M† = outer(diag, diag*) * rho, an O(d^2) kernel per lane.
    diag_ops = None
    if all(np.count_nonzero(op - np.diag(np.diagonal(op))) == 0 for op in ops):
        diags = np.stack([np.diagonal(op) for op in ops])          # (m, d)
        diag_ops = np.einsum("mi,mj->mij", diags, diags.conj())    # (m, d, d)
        diag_probs = (diags.real**2 + diags.imag**2)               # (m, d)

    nrec = nsteps // stride
    obs_traces = {
        name: np.empty((nlanes, nrec + 1)) for name in observables
    }
    for name, fn in observables.items():
        obs_traces[name][:, 0] = fn(rho)
    outcomes = np.empty((nlanes, nsteps), dtype=np.int8) if record_outcomes else None
    first_conv = None
    conv_level = None
    if convergence_threshold is not None:
        first_conv = np.full(nlanes, -1, dtype=np.int64)
        conv_level = np.full(nlanes, -1, dtype=np.int64)

    step = 0
    rec = 0
    while step < nsteps:
        block = min(NOISE_BLOCK, nsteps - step)
        uniforms = np.stack([rng.random(block) for rng in rngs], axis=0)
        for j in range(block):
            pops = np.einsum("bii->bi", rho).real
            if diag_ops is not None:
                true_probs = pops @ diag_probs.T
            else:
                true_probs = np.einsum("mij,bji->bm", mdag_m, rho).real
            np.clip(true_probs, 0.0, None, out=true_probs)
            probs = true_probs @ eta.T
            total = probs.sum(axis=1)
            if np.any(total < PROB_EPS):
                raise NumericalGuardError("all outcome probabilities below threshold")
            cum = np.cumsum(probs, axis=1)
            y = (cum < (uniforms[:, j] * total)[:, None]).sum(axis=1).astype(np.int64)
            np.clip(y, 0, pc.n_outcomes - 1, out=y)

            weights = eta[y]  # (B, n_true)
            if diag_ops is not None:
                factors = np.einsum("bm,mij->bij", weights, diag_ops)
                num = factors * rho
            else:
                mr = np.matmul(ops[:, None], rho[None])
                sandwiched = np.matmul(mr, ops_dag[:, None])
                num = np.einsum("bm,mbil->bil", weights, sandwiched)
            rho = renormalize_density(num)

            if record_outcomes:
                outcomes[:, step] = y.astype(np.int8)
            if convergence_threshold is not None:
                pops = np.einsum("bii->bi", rho).real
                pmax = pops.max(axis=1)
                hit = (pmax > convergence_threshold) & (first_conv < 0)
                if hit.any():
                    first_conv[hit] = step + 1
                    conv_level[hit] = pops[hit].argmax(axis=1)
            step += 1
            if step % stride == 0:
                rec += 1
                for name, fn in observables.items():
                    obs_traces[name][:, rec] = fn(rho)
            if (
                stop_when_converged
                and convergence_threshold is not None
                and np.all(first_conv > 0)
            ):
                nrec = rec
                if record_outcomes:
                    outcomes = outcomes[:, :step]
                obs_traces = {k: v[:, : nrec + 1] for k, v in obs_traces.items()}
                break
        else:
            continue
        break

    times = np.arange(0, nrec + 1, dtype=float) * stride
    return DiscreteEnsembleResult(
        times=times,
        outcomes=outcomes,
        observables=obs_traces,
        final_rho=rho,
        first_converged=first_conv,
        converged_level=conv_level,
    )


@dataclass
class MeterEnsembleResult:
    times: np.ndarray
    outcomes: np.ndarray                 # (ntraj, nsteps) real measurement outcomes
    observables: dict[str, np.ndarray]
    final_rho: np.ndarray


def run_meter_ensemble(
    m: GaussianMeter,
    rho0,
    nsteps: int,
    rngs,
    observables: dict | None = None,
    stride: int = 1,
) -> MeterEnsembleResult:
    """Repeated Gaussian-meter rounds on a batch of qubit trajectories.

    Per step each lane draws one uniform (mixture component) then one normal
    (outcome), blocked in NOISE_BLOCK chunks.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (2, 2):
        raise ValidationError("the Gaussian meter acts on a single qubit")
    nlanes = len(rngs)
    rho = np.broadcast_to(rho0, (nlanes, 2, 2)).copy()
    observables = observables or {}

    eps = m.shift
    one = 1.0 + m.sigma
    sd = math.sqrt(m.variance)

    nrec = nsteps // stride
    obs_traces = {name: np.empty((nlanes, nrec + 1)) for name in observables}
    for name, fn in observables.items():
        obs_traces[name][:, 0] = fn(rho)
    ys = np.empty((nlanes, nsteps))

    step = 0
    rec = 0
    while step < nsteps:
        block = min(NOISE_BLOCK, nsteps - step)
        uniforms = np.stack([rng.random(block) for rng in rngs], axis=0)
        normals = np.stack([rng.standard_normal(block) for rng in rngs], axis=0)
        for j in range(block):
            pg = rho[:, 0, 0].real
            mean = np.where(uniforms[:, j] < pg, +eps, -eps)
            y = mean + sd * normals[:, j]
            ys[:, step] = y

            fgg = np.exp((2 * y * eps - eps * eps) / one)
            fee = np.exp((-2 * y * eps - eps * eps) / one)
            fge = math.exp(-eps * eps)
            num = np.empty_like(rho)
            num[:, 0, 0] = fgg * rho[:, 0, 0]
            num[:, 1, 1] = fee * rho[:, 1, 1]
            num[:, 0, 1] = fge * rho[:, 0, 1]
            num[:, 1, 0] = fge * rho[:, 1, 0]
            rho = renormalize_density(num)

            step += 1
            if step % stride == 0:
                rec += 1
                for name, fn in observables.items():
                    obs_traces[name][:, rec] = fn(rho)

    times = np.arange(0, nrec + 1, dtype=float) * stride
    return MeterEnsembleResult(
        times=times, outcomes=ys, observables=obs_traces, final_rho=rho
    )
