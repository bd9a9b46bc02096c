"""Figure rendering from qsme CSV outputs.

Inputs follow the simulator's CSV schema: records.csv rows are
(traj_id, step, time, channel columns, observables); ensemble.csv rows are
(time, <name>_mean, <name>_stderr, ...).  Rendering is read-only with respect
to inputs; on any validation error no output file is written.  Fitted rates
are printed to standard output and are a deterministic function of the inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import yaml

KINDS = ("trajectory-fan", "lyapunov-decay", "click-histogram", "lindblad-overlay")


class SpecError(ValueError):
    """Invalid figure spec or input not conforming to the CSV schema."""


@dataclass
class FigureSpec:
    kind: str
    out: str
    records: str | None = None
    ensemble: str | None = None
    reference: str | None = None
    column: str | None = None
    max_trajectories: int = 50
    bins: int = 40
    title: str | None = None


def load_spec(path) -> FigureSpec:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise SpecError(f"spec is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise SpecError("spec root must be a mapping")
    allowed = {f.name for f in FigureSpec.__dataclass_fields__.values()}
    for key in data:
        if key not in allowed:
            raise SpecError(f"unknown spec field {key!r}")
    if data.get("kind") not in KINDS:
        raise SpecError(f"kind must be one of {', '.join(KINDS)}")
    if not data.get("out"):
        raise SpecError("out: output image path is required")
    return FigureSpec(**data)


def _read_table(path) -> np.ndarray:
    table = np.genfromtxt(path, delimiter=",", names=True)
    if table.shape == ():  # single data row
        table = table.reshape(1)
    return table


def _require_columns(table, cols, path):
    names = table.dtype.names or ()
    for col in cols:
        if col not in names:
            raise SpecError(f"{path}: missing column {col!r}")


def _records(spec: FigureSpec, extra_cols=()):
    if not spec.records:
        raise SpecError("records: path to records.csv is required for this kind")
    table = _read_table(spec.records)
    _require_columns(table, ("traj_id", "step", "time") + tuple(extra_cols), spec.records)
    if table.size == 0:
        raise SpecError(f"{spec.records}: empty trajectory set")
    return table


def _ensemble(path, column):
    table = _read_table(path)
    _require_columns(table, ("time", f"{column}_mean", f"{column}_stderr"), path)
    if table.size == 0:
        raise SpecError(f"{path}: empty ensemble table")
    return table


def fit_exponential_decay(times, means):
    """Least-squares single-exponential fit on the log of positive means."""
    mask = means > 1e-12
    if mask.sum() < 3:
        raise SpecError("not enough positive points for an exponential fit")
    t, v = times[mask], np.log(means[mask])
    slope, intercept = np.polyfit(t, v, 1)
    pred = slope * t + intercept
    ss_res = float(np.sum((v - pred) ** 2))
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return -float(slope), float(np.exp(intercept)), r2


def waiting_time_fit(table, column):
    """First-click waiting times with censoring-aware exponential rate.

    Returns (waits, rate, stderr): rate = clicks / total exposure, the maximum
    likelihood estimate for exponentially distributed waiting times observed
    up to the record horizon.
    """
    traj = table["traj_id"].astype(int)
    times = table["time"]
    counts = table[column]
    horizon = float(times.max())
    waits = []
    exposure = 0.0
    for tid in np.unique(traj):
        sel = traj == tid
        clicked = sel & (counts > 0)
        if clicked.any():
            t_first = float(times[clicked].min())
            waits.append(t_first)
            exposure += t_first
        else:
            exposure += horizon
    if not waits:
        raise SpecError("no clicks found in the record set")
    rate = len(waits) / exposure
    stderr = rate / math.sqrt(len(waits))
    return np.array(waits), rate, stderr


def render(spec: FigureSpec) -> Path:
    """Render the figure described by the spec, returning the output path."""
    if spec.kind == "trajectory-fan":
        fig = _render_fan(spec)
    elif spec.kind == "lyapunov-decay":
        fig = _render_decay(spec)
    elif spec.kind == "click-histogram":
        fig = _render_histogram(spec)
    elif spec.kind == "lindblad-overlay":
        fig = _render_overlay(spec)
    else:
        raise SpecError(f"unknown figure kind {spec.kind!r}")
    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return out


def _render_fan(spec: FigureSpec):
    if not spec.column:
        raise SpecError("column: observable column is required for trajectory-fan")
    table = _records(spec, (spec.column,))
    traj = table["traj_id"].astype(int)
    ids = np.unique(traj)[: spec.max_trajectories]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for tid in ids:
        sel = traj == tid
        ax.plot(table["time"][sel], table[spec.column][sel], lw=0.7, alpha=0.5)
    ax.set_xlabel("time")
    ax.set_ylabel(spec.column)
    ax.set_title(spec.title or f"{spec.column} trajectories (n={len(ids)})")
    return fig


def _render_decay(spec: FigureSpec):
    if not spec.ensemble:
        raise SpecError("ensemble: path to ensemble.csv is required for lyapunov-decay")
    if not spec.column:
        raise SpecError("column: observable column is required for lyapunov-decay")
    table = _ensemble(spec.ensemble, spec.column)
    t = table["time"]
    mean = table[f"{spec.column}_mean"]
    err = table[f"{spec.column}_stderr"]
    rate, amp, r2 = fit_exponential_decay(t, mean)
    print(f"lyapunov-decay fitted rate = {rate:.6g} (R^2 = {r2:.6g})")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.fill_between(t, mean - err, mean + err, alpha=0.3, label="ensemble ± stderr")
    ax.plot(t, mean, lw=1.2, label=f"{spec.column} mean")
    ax.plot(t, amp * np.exp(-rate * t), "k--", lw=1.0,
            label=f"fit: rate {rate:.4g}")
    ax.set_yscale("log")
    ax.set_xlabel("time")
    ax.set_ylabel(spec.column)
    ax.legend()
    ax.set_title(spec.title or "ensemble decay with exponential fit")
    return fig


def _render_histogram(spec: FigureSpec):
    column = spec.column or "dN_0"
    table = _records(spec, (column,))
    waits, rate, stderr = waiting_time_fit(table, column)
    print(f"click-histogram fitted rate = {rate:.6g} +- {stderr:.6g}")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.hist(waits, bins=spec.bins, density=True, alpha=0.6, label="waiting times")
    grid = np.linspace(0, float(waits.max()), 300)
    ax.plot(grid, rate * np.exp(-rate * grid), "k--",
            label=f"fit: rate {rate:.4g} ± {stderr:.2g}")
    ax.set_xlabel("waiting time")
    ax.set_ylabel("density")
    ax.legend()
    ax.set_title(spec.title or f"first-click waiting times (n={len(waits)})")
    return fig


def _render_overlay(spec: FigureSpec):
    if not spec.ensemble or not spec.reference:
        raise SpecError(
            "ensemble and reference ensemble paths are required for lindblad-overlay"
        )
    if not spec.column:
        raise SpecError("column: observable column is required for lindblad-overlay")
    table = _ensemble(spec.ensemble, spec.column)
    ref = _ensemble(spec.reference, spec.column)
    t = table["time"]
    mean = table[f"{spec.column}_mean"]
    err = table[f"{spec.column}_stderr"]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.fill_between(t, mean - err, mean + err, alpha=0.3, label="ensemble ± stderr")
    ax.plot(t, mean, lw=1.2, label="stochastic ensemble mean")
    ax.plot(ref["time"], ref[f"{spec.column}_mean"], "k--", lw=1.2,
            label="deterministic reference")
    ax.set_xlabel("time")
    ax.set_ylabel(spec.column)
    ax.legend()
    ax.set_title(spec.title or f"{spec.column}: ensemble vs reference")
    return fig
