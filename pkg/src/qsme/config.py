"""Scenario configuration: YAML parsing, schema validation with field paths,
and normalization.

A config file is a nested key/value document:

    scenario: diffusive
    physics:
      gamma: 1.0
      eta: 1.0
      init_bloch: [1.0, 0.0, 0.0]
    numerics:
      dt: 0.001
      tmax: 1.0
      ntraj: 200
      seed: 7
      stride: 1
    output:
      dir: out

Unknown keys are rejected; every violation is reported with its field path.
parse -> serialize -> parse is the identity on the normalized form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ValidationError

SCENARIOS = (
    "qnd-photon",
    "resonant-photon",
    "qubit-gaussian",
    "diffusive",
    "jump",
    "mixed",
    "lindblad",
)

DISCRETE_SCENARIOS = ("qnd-photon", "resonant-photon", "qubit-gaussian")

# Memory budget: ntraj * rows * columns of the records file.
DEFAULT_MAX_CELLS = 50_000_000


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _field_number(section, data, key, default, lo=None, hi=None, integer=False):
    path = f"{section}.{key}"
    v = data.get(key, default)
    if v is None:
        raise ValidationError(f"{path}: required")
    if integer:
        if not isinstance(v, int) or isinstance(v, bool):
            raise ValidationError(f"{path}: must be an integer")
    elif not _is_number(v):
        raise ValidationError(f"{path}: must be a finite number")
    if lo is not None and v < lo:
        raise ValidationError(f"{path}: must be >= {lo}")
    if hi is not None and v > hi:
        raise ValidationError(f"{path}: must be <= {hi}")
    return int(v) if integer else float(v)


def _field_bloch(section, data, key, default):
    path = f"{section}.{key}"
    v = data.get(key, default)
    if (
        not isinstance(v, (list, tuple))
        or len(v) != 3
        or not all(_is_number(c) for c in v)
    ):
        raise ValidationError(f"{path}: must be a list of three numbers [x, y, z]")
    x, y, z = (float(c) for c in v)
    if x * x + y * y + z * z > 1.0 + 1e-9:
        raise ValidationError(f"{path}: Bloch vector must have norm <= 1")
    return [x, y, z]


def _field_control(section, data, key):
    path = f"{section}.{key}"
    v = data.get(key, [])
    if not isinstance(v, list):
        raise ValidationError(f"{path}: must be a list of [t, u] pairs")
    out = []
    prev_t = None
    for i, pair in enumerate(v):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2 or not all(
            _is_number(c) for c in pair
        ):
            raise ValidationError(f"{path}[{i}]: must be a [t, u] pair of numbers")
        t, u = float(pair[0]), float(pair[1])
        if prev_t is not None and t <= prev_t:
            raise ValidationError(f"{path}[{i}]: breakpoints must be strictly increasing")
        prev_t = t
        out.append([t, u])
    return out


def _reject_unknown(section: str, data: dict, allowed) -> None:
    for key in data:
        if key not in allowed:
            raise ValidationError(f"{section}.{key}: unknown field")


@dataclass
class ScenarioConfig:
    scenario: str
    physics: dict = field(default_factory=dict)
    numerics: dict = field(default_factory=dict)
    output_dir: str = "out"

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "physics": dict(self.physics),
            "numerics": dict(self.numerics),
            "output": {"dir": self.output_dir},
        }


_PHYSICS_FIELDS = {
    "qnd-photon": ("theta", "alpha", "error_rate"),
    "resonant-photon": ("theta", "alpha"),
    "qubit-gaussian": ("alpha", "theta", "sigma", "init_bloch"),
    "diffusive": ("gamma", "eta", "init_bloch", "control"),
    "jump": ("rate", "shot_rate", "efficiency", "init_bloch"),
    "mixed": ("gamma", "eta", "rate", "shot_rate", "efficiency", "init_bloch"),
    "lindblad": ("gamma", "decay_rate", "init_bloch"),
}


def _parse_physics(scenario: str, data: dict) -> dict:
    _reject_unknown("physics", data, _PHYSICS_FIELDS[scenario])
    p = {}
    if scenario == "qnd-photon":
        p["theta"] = _field_number("physics", data, "theta", 0.61)
        p["alpha"] = _field_number("physics", data, "alpha", 1.5, lo=0.0)
        p["error_rate"] = _field_number("physics", data, "error_rate", 0.0, lo=0.0, hi=1.0)
    elif scenario == "resonant-photon":
        p["theta"] = _field_number("physics", data, "theta", 0.5)
        p["alpha"] = _field_number("physics", data, "alpha", 1.0, lo=0.0)
    elif scenario == "qubit-gaussian":
        p["alpha"] = _field_number("physics", data, "alpha", 1.0, lo=0.0)
        p["theta"] = _field_number("physics", data, "theta", 0.5)
        p["sigma"] = _field_number("physics", data, "sigma", 0.0, lo=0.0)
        p["init_bloch"] = _field_bloch("physics", data, "init_bloch", [1.0, 0.0, 0.0])
    elif scenario == "diffusive":
        p["gamma"] = _field_number("physics", data, "gamma", 1.0, lo=1e-12)
        p["eta"] = _field_number("physics", data, "eta", 1.0, lo=0.0, hi=1.0)
        p["init_bloch"] = _field_bloch("physics", data, "init_bloch", [1.0, 0.0, 0.0])
        p["control"] = _field_control("physics", data, "control")
    elif scenario == "jump":
        p["rate"] = _field_number("physics", data, "rate", 1.0, lo=1e-12)
        p["shot_rate"] = _field_number("physics", data, "shot_rate", 0.0, lo=0.0)
        p["efficiency"] = _field_number("physics", data, "efficiency", 1.0, lo=0.0, hi=1.0)
        p["init_bloch"] = _field_bloch("physics", data, "init_bloch", [0.0, 0.0, 1.0])
    elif scenario == "mixed":
        p["gamma"] = _field_number("physics", data, "gamma", 1.0, lo=1e-12)
        p["eta"] = _field_number("physics", data, "eta", 1.0, lo=0.0, hi=1.0)
        p["rate"] = _field_number("physics", data, "rate", 1.0, lo=1e-12)
        p["shot_rate"] = _field_number("physics", data, "shot_rate", 0.0, lo=0.0)
        p["efficiency"] = _field_number("physics", data, "efficiency", 1.0, lo=0.0, hi=1.0)
        p["init_bloch"] = _field_bloch("physics", data, "init_bloch", [1.0, 0.0, 0.0])
    elif scenario == "lindblad":
        p["gamma"] = _field_number("physics", data, "gamma", 1.0, lo=0.0)
        p["decay_rate"] = _field_number("physics", data, "decay_rate", 0.0, lo=0.0)
        p["init_bloch"] = _field_bloch("physics", data, "init_bloch", [1.0, 0.0, 0.0])
    return p


def _parse_numerics(scenario: str, data: dict) -> dict:
    allowed = ["ntraj", "seed", "stride", "max_cells"]
    if scenario in DISCRETE_SCENARIOS:
        allowed += ["nsteps", "nmax"]
    else:
        allowed += ["dt", "tmax"]
    if scenario in ("qnd-photon", "resonant-photon"):
        pass  # nmax already included above
    _reject_unknown("numerics", data, allowed)

    n = {}
    n["ntraj"] = _field_number("numerics", data, "ntraj", 1, lo=1, integer=True)
    n["seed"] = _field_number("numerics", data, "seed", 0, lo=0, integer=True)
    n["stride"] = _field_number("numerics", data, "stride", 1, lo=1, integer=True)
    n["max_cells"] = _field_number(
        "numerics", data, "max_cells", DEFAULT_MAX_CELLS, lo=1, integer=True
    )
    if scenario in DISCRETE_SCENARIOS:
        n["nsteps"] = _field_number("numerics", data, "nsteps", 100, lo=1, integer=True)
        if scenario in ("qnd-photon", "resonant-photon"):
            # coherent-state scenarios keep the tail mass below 1e-8 for |alpha| <= 3
            n["nmax"] = _field_number("numerics", data, "nmax", 30, lo=1, integer=True)
        nsteps = n["nsteps"]
    else:
        n["dt"] = _field_number("numerics", data, "dt", 1e-3, lo=1e-12)
        n["tmax"] = _field_number("numerics", data, "tmax", 1.0, lo=1e-12)
        nsteps = int(round(n["tmax"] / n["dt"]))
        if nsteps < 1:
            raise ValidationError("numerics.tmax: must be at least one step of dt")
    if nsteps % n["stride"] != 0:
        raise ValidationError("numerics.stride: must divide the number of steps")
    if scenario == "lindblad" and n["ntraj"] != 1:
        raise ValidationError("numerics.ntraj: the deterministic reference runs one trajectory")
    return n


def parse_config(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ValidationError("config root must be a mapping")
    _reject_unknown("config", data, ("scenario", "physics", "numerics", "output"))
    scenario = data.get("scenario")
    if scenario not in SCENARIOS:
        raise ValidationError(
            f"scenario: must be one of {', '.join(SCENARIOS)} (got {scenario!r})"
        )
    physics = data.get("physics") or {}
    numerics = data.get("numerics") or {}
    output = data.get("output") or {}
    if not isinstance(physics, dict):
        raise ValidationError("physics: must be a mapping")
    if not isinstance(numerics, dict):
        raise ValidationError("numerics: must be a mapping")
    if not isinstance(output, dict):
        raise ValidationError("output: must be a mapping")
    _reject_unknown("output", output, ("dir",))
    out_dir = output.get("dir", "out")
    if not isinstance(out_dir, str) or not out_dir:
        raise ValidationError("output.dir: must be a non-empty string")

    cfg = ScenarioConfig(
        scenario=scenario,
        physics=_parse_physics(scenario, physics),
        numerics=_parse_numerics(scenario, numerics),
        output_dir=out_dir,
    )
    _check_budget(cfg)
    return cfg


def _records_columns(cfg: ScenarioConfig) -> int:
    from .cli import plan_columns

    return plan_columns(cfg)


def _check_budget(cfg: ScenarioConfig) -> None:
    n = cfg.numerics
    nsteps = n.get("nsteps") or int(round(n["tmax"] / n["dt"]))
    rows = nsteps // n["stride"] + 1
    cells = n["ntraj"] * rows * _records_columns(cfg)
    if cells > n["max_cells"]:
        raise ValidationError(
            f"numerics: records grid needs {cells} cells > max_cells={n['max_cells']}; "
            f"increase numerics.stride or raise numerics.max_cells"
        )


def load_config(path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"config: not valid YAML ({exc})") from exc
    return parse_config(data)


def serialize_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
