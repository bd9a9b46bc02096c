"""Command-line front end: seeded batch execution, CSV export, verification.

Outputs for a run:
  records.csv   one row per (trajectory, recorded step): traj_id, step, time,
                one column per measurement channel (dy_* real increments,
                dN_* counts, y discrete/continuous outcome), then observables.
                Floats carry 17 significant digits.
  ensemble.csv  one row per recorded time: time, then mean and standard error
                per observable (unbiased sample variance over trajectories).
  meta.yaml     normalized config echo, RNG algorithm identifier, column
                documentation.

Reproducibility: per-trajectory Philox streams keyed by (seed, traj_id) make
records byte-identical for identical (config, seed), for any --threads value
(trajectories are dispatched in fixed chunks and written in traj_id order).

Exit codes: 0 success, 1 validation error, 2 numerical-guard/verification
failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import bisect
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import __version__, analysis, channels, diffusive, jump
from .config import ScenarioConfig, load_config, parse_config
from .errors import NumericalGuardError, ValidationError
from .rng import RNG_ALGORITHM, trajectory_rngs
from .systems import FockSpace, bloch_density, coherent, pauli, pure_density

CHUNK_SIZE = 1024


# ---------------------------------------------------------------------------
# Scenario plans
# ---------------------------------------------------------------------------


@dataclass
class ColumnSpec:
    name: str
    kind: str  # "float" | "int"


@dataclass
class ChunkResult:
    channels: np.ndarray               # (B, nrec, ncol) window values
    traces: dict[str, np.ndarray]      # (B, nrec+1) incl. t = 0
    obs_sum: dict[str, np.ndarray]
    obs_sumsq: dict[str, np.ndarray]


@dataclass
class Plan:
    cfg: ScenarioConfig
    times: np.ndarray
    channel_cols: list[ColumnSpec]
    observable_names: list[str]
    run_chunk: Callable


_SCENARIO_COLUMNS = {
    "qnd-photon": (1, 4),
    "resonant-photon": (1, 2),
    "qubit-gaussian": (1, 5),
    "diffusive": (1, 5),
    "jump": (1, 2),
    "mixed": (2, 6),
    "lindblad": (0, 5),
}


def plan_columns(cfg: ScenarioConfig) -> int:
    nchan, nobs = _SCENARIO_COLUMNS[cfg.scenario]
    return 3 + nchan + nobs


def _qubit_observables(with_lyap: str | None = None) -> dict:
    obs = {
        "bloch_x": analysis.obs_bloch("x"),
        "bloch_y": analysis.obs_bloch("y"),
        "bloch_z": analysis.obs_bloch("z"),
        "purity": analysis.obs_purity,
    }
    if with_lyap == "bloch":
        obs["lyap_bloch"] = analysis.bloch_z_lyapunov().evaluator
    elif with_lyap == "coherence":
        obs["lyap_coherence"] = analysis.qubit_coherence_lyapunov().evaluator
    return obs


def _piecewise_control(schedule):
    if not schedule:
        return None
    ts = [t for t, _ in schedule]
    us = [u for _, u in schedule]

    def control(t: float) -> float:
        i = bisect.bisect_right(ts, t) - 1
        return us[i] if i >= 0 else 0.0

    return control


def _sums_from_traces(traces: dict) -> tuple[dict, dict]:
    s = {k: v.sum(axis=0) for k, v in traces.items()}
    sq = {k: (v * v).sum(axis=0) for k, v in traces.items()}
    return s, sq


def build_plan(cfg: ScenarioConfig) -> Plan:
    num = cfg.numerics
    phys = cfg.physics
    seed = num["seed"]
    stride = num["stride"]

    if cfg.scenario in ("qnd-photon", "resonant-photon"):
        space = FockSpace(num["nmax"])
        rho0 = pure_density(coherent(phys["alpha"], space))
        if cfg.scenario == "qnd-photon":
            chan = channels.partition(
                channels.qnd_channel(phys["theta"], space),
                channels.symmetric_errors(phys["error_rate"]),
            )
            obs = {
                "nbar": analysis.obs_mean_occupation,
                "pmax": analysis.obs_max_population,
                "nstar": lambda rho_b: analysis.populations(rho_b).argmax(axis=-1).astype(float),
                "lyap_qnd": analysis.qnd_fock_lyapunov().evaluator,
            }
        else:
            chan = channels.perfect(channels.resonant_channel(phys["theta"], space))
            obs = {
                "nbar": analysis.obs_mean_occupation,
                "p0": analysis.obs_population(0),
            }
        nsteps = num["nsteps"]
        times = np.arange(nsteps // stride + 1, dtype=float) * stride

        def run_chunk(traj_ids):
            res = channels.run_discrete_ensemble(
                chan, rho0, nsteps, trajectory_rngs(seed, traj_ids),
                observables=obs, stride=stride, record_outcomes=True,
            )
            windowed = res.outcomes[:, stride - 1 :: stride].astype(float)[:, :, None]
            s, sq = _sums_from_traces(res.observables)
            return ChunkResult(windowed, res.observables, s, sq)

        return Plan(cfg, times, [ColumnSpec("y", "int")], list(obs), run_chunk)

    if cfg.scenario == "qubit-gaussian":
        meter = channels.GaussianMeter(phys["alpha"], phys["theta"], phys["sigma"])
        rho0 = bloch_density(*phys["init_bloch"])
        obs = _qubit_observables("coherence")
        nsteps = num["nsteps"]
        times = np.arange(nsteps // stride + 1, dtype=float) * stride

        def run_chunk(traj_ids):
            res = channels.run_meter_ensemble(
                meter, rho0, nsteps, trajectory_rngs(seed, traj_ids),
                observables=obs, stride=stride,
            )
            windowed = res.outcomes[:, stride - 1 :: stride][:, :, None]
            s, sq = _sums_from_traces(res.observables)
            return ChunkResult(windowed, res.observables, s, sq)

        return Plan(cfg, times, [ColumnSpec("y", "float")], list(obs), run_chunk)

    if cfg.scenario == "diffusive":
        model = diffusive.DiffusiveModel(
            h0=np.zeros((2, 2), dtype=complex),
            channels=[(math.sqrt(phys["gamma"]) * pauli("z"), phys["eta"])],
            h1=pauli("x") if phys["control"] else None,
            control=_piecewise_control(phys["control"]),
        )
        rho0 = bloch_density(*phys["init_bloch"])
        obs = _qubit_observables("bloch")
        dt, nsteps = num["dt"], int(round(num["tmax"] / num["dt"]))
        times = np.arange(nsteps // stride + 1, dtype=float) * (stride * dt)

        def run_chunk(traj_ids):
            res = diffusive.run_diffusive_ensemble(
                model, rho0, dt, nsteps, trajectory_rngs(seed, traj_ids),
                observables=obs, stride=stride,
            )
            return ChunkResult(res.dy, res.observables, res.obs_sum, res.obs_sumsq)

        return Plan(cfg, times, [ColumnSpec("dy_0", "float")], list(obs), run_chunk)

    if cfg.scenario == "jump":
        model = jump.qubit_decay_model(
            shot_rate=phys["shot_rate"], efficiency=phys["efficiency"], rate=phys["rate"]
        )
        rho0 = bloch_density(*phys["init_bloch"])
        obs = {"pe": analysis.obs_population(1), "purity": analysis.obs_purity}
        dt, nsteps = num["dt"], int(round(num["tmax"] / num["dt"]))
        times = np.arange(nsteps // stride + 1, dtype=float) * (stride * dt)

        def run_chunk(traj_ids):
            res = jump.run_jump_ensemble(
                model, rho0, dt, nsteps, trajectory_rngs(seed, traj_ids),
                observables=obs, stride=stride,
            )
            return ChunkResult(
                res.dn.astype(float), res.observables, res.obs_sum, res.obs_sumsq
            )

        return Plan(cfg, times, [ColumnSpec("dN_0", "int")], list(obs), run_chunk)

    if cfg.scenario == "mixed":
        model = jump.MixedModel(
            diffusive=diffusive.DiffusiveModel(
                h0=np.zeros((2, 2), dtype=complex),
                channels=[(math.sqrt(phys["gamma"]) * pauli("z"), phys["eta"])],
            ),
            jump=jump.qubit_decay_model(
                shot_rate=phys["shot_rate"],
                efficiency=phys["efficiency"],
                rate=phys["rate"],
            ),
        )
        rho0 = bloch_density(*phys["init_bloch"])
        obs = _qubit_observables()
        obs["pe"] = analysis.obs_population(1)
        obs["lyap_bloch"] = analysis.bloch_z_lyapunov().evaluator
        dt, nsteps = num["dt"], int(round(num["tmax"] / num["dt"]))
        times = np.arange(nsteps // stride + 1, dtype=float) * (stride * dt)

        def run_chunk(traj_ids):
            res = jump.run_mixed_ensemble(
                model, rho0, dt, nsteps, trajectory_rngs(seed, traj_ids),
                observables=obs, stride=stride,
            )
            chans = np.concatenate([res.dy, res.dn.astype(float)], axis=2)
            return ChunkResult(chans, res.observables, res.obs_sum, res.obs_sumsq)

        cols = [ColumnSpec("dy_0", "float"), ColumnSpec("dN_0", "int")]
        return Plan(cfg, times, cols, list(obs), run_chunk)

    if cfg.scenario == "lindblad":
        ops = [math.sqrt(phys["gamma"]) * pauli("z")] if phys["gamma"] > 0 else []
        if phys["decay_rate"] > 0:
            ops.append(math.sqrt(phys["decay_rate"]) * pauli("minus"))
        model = analysis.decoherence_model(np.zeros((2, 2), dtype=complex), ops)
        rho0 = bloch_density(*phys["init_bloch"])
        obs = _qubit_observables("bloch")
        dt, nsteps = num["dt"], int(round(num["tmax"] / num["dt"]))
        times = np.arange(nsteps // stride + 1, dtype=float) * (stride * dt)

        def run_chunk(traj_ids):
            _, states = analysis.lindblad_propagate(
                model, rho0, dt, num["tmax"], stride=stride
            )
            traces = {name: fn(states)[None, :] for name, fn in obs.items()}
            s, sq = _sums_from_traces(traces)
            empty = np.zeros((1, len(times) - 1, 0))
            return ChunkResult(empty, traces, s, sq)

        return Plan(cfg, times, [], list(obs), run_chunk)

    raise ValidationError(f"scenario: unknown scenario {cfg.scenario!r}")


# ---------------------------------------------------------------------------
# Execution and CSV output
# ---------------------------------------------------------------------------


def _fmt(value: float, kind: str = "float") -> str:
    if kind == "int":
        return str(int(round(value)))
    return format(float(value), ".17g")


@dataclass
class RunArtifacts:
    records_path: Path
    ensemble_path: Path
    meta_path: Path
    ntraj: int


def execute(cfg: ScenarioConfig, threads: int | None = None) -> RunArtifacts:
    plan = build_plan(cfg)
    ntraj = cfg.numerics["ntraj"]
    threads = threads or os.cpu_count() or 1
    chunks = [range(a, min(a + CHUNK_SIZE, ntraj)) for a in range(0, ntraj, CHUNK_SIZE)]

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda ids: plan.run_chunk(ids), chunks))
    else:
        results = [plan.run_chunk(ids) for ids in chunks]

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / "records.csv"
    ensemble_path = out_dir / "ensemble.csv"
    meta_path = out_dir / "meta.yaml"

    stride = cfg.numerics["stride"]
    times = plan.times
    obs_names = plan.observable_names
    with open(records_path, "w", newline="") as f:
        header = ["traj_id", "step", "time"]
        header += [c.name for c in plan.channel_cols]
        header += obs_names
        f.write(",".join(header) + "\n")
        for ids, res in zip(chunks, results):
            for lane, tid in enumerate(ids):
                rows = []
                zero_ch = ",".join(_fmt(0.0, c.kind) for c in plan.channel_cols)
                first = [str(tid), "0", _fmt(times[0])]
                if zero_ch:
                    first.append(zero_ch)
                first += [_fmt(res.traces[n][lane, 0]) for n in obs_names]
                rows.append(",".join(first))
                for r in range(1, len(times)):
                    cells = [str(tid), str(r * stride), _fmt(times[r])]
                    cells += [
                        _fmt(res.channels[lane, r - 1, ci], c.kind)
                        for ci, c in enumerate(plan.channel_cols)
                    ]
                    cells += [_fmt(res.traces[n][lane, r]) for n in obs_names]
                    rows.append(",".join(cells))
                f.write("\n".join(rows) + "\n")

    total_sum = {n: sum(res.obs_sum[n] for res in results) for n in obs_names}
    total_sumsq = {n: sum(res.obs_sumsq[n] for res in results) for n in obs_names}
    stats = analysis.stats_from_sums(times, total_sum, total_sumsq, ntraj)
    with open(ensemble_path, "w", newline="") as f:
        header = ["time"]
        for n in obs_names:
            header += [f"{n}_mean", f"{n}_stderr"]
        f.write(",".join(header) + "\n")
        for r in range(len(times)):
            cells = [_fmt(times[r])]
            for n in obs_names:
                cells += [_fmt(stats.means[n][r]), _fmt(stats.stderrs[n][r])]
            f.write(",".join(cells) + "\n")

    meta = {
        "version": __version__,
        "rng": {"algorithm": RNG_ALGORITHM, "seed": cfg.numerics["seed"]},
        "config": cfg.to_dict(),
        "columns": {
            "records": ["traj_id", "step", "time"]
            + [c.name for c in plan.channel_cols]
            + obs_names,
            "ensemble": ["time"]
            + [f"{n}_{s}" for n in obs_names for s in ("mean", "stderr")],
        },
        "notes": {
            "stride": "dy/dN columns hold sums over each recording window; "
            "the discrete outcome column y holds the last outcome of the window",
        },
    }
    with open(meta_path, "w") as f:
        yaml.safe_dump(meta, f, sort_keys=True)
    return RunArtifacts(records_path, ensemble_path, meta_path, ntraj)


# ---------------------------------------------------------------------------
# Built-in verification suite
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tol: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: measured={self.measured:.3e} tol={self.tol:.3e}"


def _random_density(rng, dim):
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def verify(cfg: ScenarioConfig) -> list[CheckResult]:
    """Scenario-relevant invariant checks at desk scale (seconds)."""
    checks: list[CheckResult] = []
    rng = np.random.default_rng(1234)
    phys = cfg.physics

    def add(name, measured, tol, ok=None):
        passed = bool(measured <= tol) if ok is None else bool(ok)
        checks.append(CheckResult(name, passed, float(measured), float(tol)))

    if cfg.scenario in ("qnd-photon", "resonant-photon"):
        space = FockSpace(cfg.numerics["nmax"])
        if cfg.scenario == "qnd-photon":
            chan = channels.qnd_channel(phys["theta"], space)
            add("kraus-completeness", chan.completeness_residual(), 1e-10)
            pc = channels.perfect(chan)
            lyap = analysis.qnd_fock_lyapunov(phys["theta"], space.nmax)
            worst = -np.inf
            for _ in range(20):
                rho = _random_density(rng, space.dim)
                rep = analysis.martingale_check(channels.channel_outcomes(pc, rho), rho, lyap)
                worst = max(worst, rep.ev_after - rep.predicted_ev)
            add("qnd-contraction-bound", worst, 1e-12)
        else:
            chan = channels.resonant_channel(phys["theta"], space)
            add("kraus-completeness", chan.completeness_residual(), 1e-10)
            pc = channels.perfect(chan)
            n_op = np.arange(space.dim, dtype=float)
            dec_op = np.sin(phys["theta"] * np.sqrt(n_op)) ** 2
            worst = 0.0
            for _ in range(20):
                rho = _random_density(rng, space.dim)
                rep = analysis.martingale_check(
                    channels.channel_outcomes(pc, rho), rho, analysis.photon_number_lyapunov()
                )
                expected = rep.v_before - float(np.sum(dec_op * np.diag(rho).real))
                worst = max(worst, abs(rep.ev_after - expected))
            add("resonant-martingale", worst, 1e-12)

    elif cfg.scenario == "qubit-gaussian":
        meter = channels.GaussianMeter(phys["alpha"], phys["theta"], phys["sigma"])
        add("meter-completeness", channels.meter_completeness_residual(meter), 1e-8)
        factor = math.exp(-meter.shift**2)
        lyap = analysis.qubit_coherence_lyapunov(factor)
        worst = 0.0
        for _ in range(20):
            rho = _random_density(rng, 2)
            rep = analysis.martingale_check(
                channels.meter_outcomes(meter, rho, order=31), rho, lyap
            )
            worst = max(worst, abs(rep.ev_after - rep.predicted_ev))
        add("meter-martingale", worst, 1e-8)

    elif cfg.scenario in ("diffusive", "mixed", "lindblad"):
        gamma = phys.get("gamma", 1.0)
        eta = phys.get("eta", 1.0)
        model = diffusive.qubit_zmeas_model(eta if cfg.scenario != "lindblad" else 0.0, max(gamma, 1e-6))
        dt = cfg.numerics["dt"]
        ops = diffusive.build_step_operators(model, 0.0, dt)
        add("step-completeness", ops.completeness_residual(), 1e-12)
        worst_eig = 0.0
        worst_tr = 0.0
        for _ in range(500):
            rho = _random_density(rng, 2)
            dy = np.sqrt(dt) * rng.normal(size=model.n_channels)
            out = diffusive.apply_diffusive_update(ops, rho, dy)
            worst_eig = max(worst_eig, -float(np.linalg.eigvalsh(out).min()))
            worst_tr = max(worst_tr, abs(float(np.trace(out).real) - 1.0))
        add("step-positivity", worst_eig, 1e-12)
        add("step-trace", worst_tr, 0.0, ok=(worst_tr == 0.0))
        rho = bloch_density(0.4, 0.2, -0.3)
        outs = analysis.diffusive_outcomes(ops, rho, order=15)
        erho = sum(w * r for w, r in outs)
        ref = analysis.lindblad_step(model, rho, dt)
        add("measurement-unbiasedness", float(np.abs(erho - ref).max()), 1e-8)
        if cfg.scenario == "mixed":
            jm = jump.qubit_decay_model(
                shot_rate=phys["shot_rate"], efficiency=phys["efficiency"], rate=phys["rate"]
            )
            defect = _jump_partition_defect(jm, _random_density(rng, 2), dt)
            add("jump-branch-partition", defect, 100 * dt * dt + phys["shot_rate"] * dt * dt * 100)

    elif cfg.scenario == "jump":
        jm = jump.qubit_decay_model(
            shot_rate=phys["shot_rate"], efficiency=phys["efficiency"], rate=phys["rate"]
        )
        dt = cfg.numerics["dt"]
        rho = _random_density(rng, 2)
        add("jump-branch-partition", _jump_partition_defect(jm, rho, dt), 100 * dt * dt)
        lind = analysis.decoherence_model(jm.h, [v for v in jm.jumps])
        avg = _jump_branch_average(jm, rho, dt)
        ref = analysis.lindblad_step(lind, rho, dt)
        add("jump-generator-consistency", analysis.trace_distance(avg, ref), 100 * dt * dt)

    return checks


def _jump_partition_defect(jm, rho, dt) -> float:
    """|Tr(no-click numerator) + sum_mu p_mu - 1|, with the no-click branch
    carrying its (1 - sum theta_bar dt) dark-count prefactor; O(dt^2)."""
    from .jump import _click_posterior, _jump_ops, _noclick_numerator

    ops = _jump_ops(jm.h, jm, dt)
    rho_b = rho[None]
    dark = 1.0 - float(np.sum(jm.shot_rates)) * dt
    p = dark * float(np.trace(_noclick_numerator(ops, rho_b)[0]).real)
    p_click = 0.0
    for mu in range(jm.n_detectors):
        p_click += float(np.trace(_click_posterior(ops, rho_b, mu)[0]).real) * dt
    return abs(p + p_click - 1.0)


def _jump_branch_average(jm, rho, dt) -> np.ndarray:
    """Branch-averaged one-step state (exact enumeration of click outcomes)."""
    from .jump import _click_posterior, _jump_ops, _noclick_numerator
    from .systems import renormalize_density

    ops = _jump_ops(jm.h, jm, dt)
    rho_b = rho[None]
    probs = jump._click_probs(ops, rho_b)[0]
    total = float(probs.sum())
    avg = (1.0 - total) * renormalize_density(_noclick_numerator(ops, rho_b)[0])
    for mu in range(jm.n_detectors):
        if probs[mu] > 0:
            avg = avg + probs[mu] * renormalize_density(_click_posterior(ops, rho_b, mu)[0])
    return avg


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qsme",
        description="Simulate discrete and continuous-time quantum stochastic "
        "master equations on qubit/photon systems.",
    )
    parser.add_argument("--config", required=True, help="YAML scenario configuration")
    parser.add_argument("--seed", type=int, help="override numerics.seed")
    parser.add_argument("--ntraj", type=int, help="override numerics.ntraj")
    parser.add_argument("--out", help="override output.dir")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker pool size (default: hardware parallelism)")
    parser.add_argument("--verify", action="store_true",
                        help="run the built-in invariant suite for the scenario")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        raw = cfg.to_dict()
        if args.seed is not None:
            raw["numerics"]["seed"] = args.seed
        if args.ntraj is not None:
            raw["numerics"]["ntraj"] = args.ntraj
        if args.out is not None:
            raw["output"]["dir"] = args.out
        cfg = parse_config(raw)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3

    if args.verify:
        checks = verify(cfg)
        for c in checks:
            print(c.line())
        return 0 if all(c.passed for c in checks) else 2

    try:
        artifacts = execute(cfg, threads=args.threads)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalGuardError as exc:
        print(f"error: {exc} (suggestion: reduce numerics.dt)", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(
        f"wrote {artifacts.records_path} and {artifacts.ensemble_path} "
        f"({artifacts.ntraj} trajectories)"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
