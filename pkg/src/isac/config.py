"""Experiment configuration: TOML in, validated dataclasses out.

A config file has top-level experiment keys (``kind``, ``trials``, ...) and
optional tables ``[system]``, ``[channel]``, ``[geometry]``, ``[link]``,
``[bcd]`` and ``[hybrid]``. Anything left out takes the default of the
chosen experiment kind. Unknown keys are errors, reported with their line.
Angles in the file are degrees and powers dBm; conversion happens when the
scenario is built.
"""

import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import tomli
import tomli_w

from .bcd import BcdConfig
from .hybrid import HybridConfig
from .model import ChannelGenParams, Geometry, LinkBudget, SystemDims, build_scenario

KINDS = ("convergence", "power-sweep", "rf-sweep", "tradeoff-region", "beampattern", "verify")
SOLVERS = ("bcd-digital", "bcd-hybrid", "bd-digital", "bd-hybrid", "reference")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, message, path="", line=None):
        self.path = path
        self.line = line
        where = f"line {line}: " if line else ""
        label = f"{path}: " if path else ""
        super().__init__(f"{where}{label}{message}")


@dataclass(frozen=True)
class GeometryConfig:
    """Positions in meters, angles in degrees; ``None`` means drawn at random."""

    bs_pos: Tuple[float, float] = (20.0, 30.0)
    radar_pos: Tuple[float, float] = (15.0, 15.0)
    ue_distance_range: Tuple[float, float] = (20.0, 80.0)
    ue_distances: Optional[Tuple[float, ...]] = None
    ue_aods_deg: Optional[Tuple[float, ...]] = None
    target_pos: Optional[Tuple[float, float]] = None
    target_aod_deg: Optional[float] = None
    target_aoa_deg: Optional[float] = None
    clutter_aods_deg: Optional[Tuple[float, ...]] = None
    clutter_aoas_deg: Optional[Tuple[float, ...]] = None

    def to_geometry(self):
        def rad(v):
            if v is None:
                return None
            if isinstance(v, tuple):
                return tuple(math.radians(x) for x in v)
            return math.radians(v)

        return Geometry(
            bs_pos=self.bs_pos,
            radar_pos=self.radar_pos,
            ue_distance_range=self.ue_distance_range,
            ue_distances=self.ue_distances,
            ue_aods=rad(self.ue_aods_deg),
            target_pos=self.target_pos,
            target_aod=rad(self.target_aod_deg),
            target_aoa=rad(self.target_aoa_deg),
            clutter_aods=rad(self.clutter_aods_deg),
            clutter_aoas=rad(self.clutter_aoas_deg),
        )


@dataclass(frozen=True)
class ScenarioTemplate:
    system: SystemDims = field(default_factory=SystemDims)
    channel: ChannelGenParams = field(default_factory=ChannelGenParams)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    link: LinkBudget = field(default_factory=LinkBudget)

    def build(self, rng, power_dbm=None):
        link = self.link if power_dbm is None else replace(self.link, power_dbm=float(power_dbm))
        return build_scenario(rng, self.system, self.channel, self.geometry.to_geometry(), link)


@dataclass(frozen=True)
class BcdSettings:
    tol: float = 1e-4
    max_iter: int = 100

    def to_config(self, weights):
        return BcdConfig(tol=self.tol, max_iter=self.max_iter, weights=weights)


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    trials: int = 50
    seed: int = 0
    solvers: Tuple[str, ...] = ("bcd-digital",)
    eta: Tuple[float, ...] = (0.5,)
    power_dbm: Tuple[float, ...] = (30.0,)
    n_rf: Tuple[int, ...] = ()
    n_rf_rx: Optional[int] = None
    angles_deg: Tuple[float, float, float] = (-90.0, 90.0, 0.1)
    workers: int = 1
    cons1: Optional[float] = None
    cons2: Optional[float] = None
    scenario: ScenarioTemplate = field(default_factory=ScenarioTemplate)
    bcd: BcdSettings = field(default_factory=BcdSettings)
    hybrid: HybridConfig = field(default_factory=HybridConfig)

    def angle_grid(self):
        """Angle grid in degrees, endpoints included."""
        start, stop, step = self.angles_deg
        n = int(round((stop - start) / step)) + 1
        return start + step * np.arange(n)


_TOP_KEYS = {f.name for f in fields(ExperimentSpec)} - {"scenario", "bcd", "hybrid"}
_TABLES = {
    "system": SystemDims,
    "channel": ChannelGenParams,
    "geometry": GeometryConfig,
    "link": LinkBudget,
    "bcd": BcdSettings,
    "hybrid": HybridConfig,
}

_KIND_DEFAULTS = {
    "convergence": {"trials": 20, "solvers": ["bcd-digital"], "eta": [0.5], "power_dbm": [30.0]},
    "power-sweep": {
        "trials": 50,
        "solvers": ["bcd-digital", "bcd-hybrid", "bd-digital", "bd-hybrid"],
        "eta": [0.5],
        "power_dbm": [20.0, 25.0, 30.0],
    },
    "rf-sweep": {
        "trials": 20,
        "solvers": ["bcd-digital", "bcd-hybrid"],
        "eta": [1.0, 0.55],
        "power_dbm": [30.0],
        "n_rf": list(range(10, 21)),
    },
    "tradeoff-region": {
        "trials": 50,
        "solvers": ["bcd-digital"],
        "eta": [round(0.1 * i, 10) for i in range(11)],
        "power_dbm": [20.0, 30.0],
    },
    "beampattern": {
        "trials": 1,
        "solvers": ["bcd-digital", "bd-digital"],
        "eta": [0.5],
        "power_dbm": [30.0],
        "system": {"n_users": 3, "n_streams": 1, "n_rf_tx": 3, "n_rf_rx": 1},
        "channel": {"n_paths_per_user": 1},
        "geometry": {
            "ue_aods_deg": [10.0, 15.0, 25.0],
            "target_aod_deg": 30.0,
            "clutter_aods_deg": [50.0, 60.0],
        },
    },
    "verify": {
        "trials": 10,
        "solvers": ["reference"],
        "eta": [0.5],
        "power_dbm": [30.0],
        "system": {
            "n_tx": 16,
            "n_rx": 2,
            "n_streams": 1,
            "n_users": 2,
            "n_rf_tx": 4,
            "n_rf_rx": 1,
            "n_sensor": 4,
            "n_clutter": 1,
        },
        "channel": {"n_paths_per_user": 2},
    },
}


def _line_of(text, key, table=None):
    """Best-effort line number of ``key`` (inside ``[table]`` when given)."""
    if text is None:
        return None
    lines = text.splitlines()
    start = 0
    if table is not None:
        hdr = re.compile(rf"^\s*\[\s*{re.escape(table)}\s*\]")
        for i, ln in enumerate(lines):
            if hdr.match(ln):
                start = i + 1
                break
    pat = re.compile(rf"^\s*\"?{re.escape(key)}\"?\s*=")
    for i in range(start, len(lines)):
        if table is not None and i > start and re.match(r"^\s*\[", lines[i]):
            break
        if pat.match(lines[i]):
            return i + 1
    hdr = re.compile(rf"^\s*\[\s*{re.escape(key)}\s*\]")
    for i, ln in enumerate(lines):
        if hdr.match(ln):
            return i + 1
    return None


def _as_tuple(v):
    if isinstance(v, list):
        return tuple(_as_tuple(x) for x in v)
    return v


def _build_table(name, cls, values, text):
    allowed = {f.name for f in fields(cls)}
    for key in values:
        if key not in allowed:
            raise ConfigError("unknown key", f"{name}.{key}", _line_of(text, key, name))
    kwargs = {k: _as_tuple(v) for k, v in values.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), name, _line_of(text, name)) from exc


def _merge(defaults, user):
    out = dict(defaults)
    for k, v in user.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def spec_from_dict(data, text=None):
    """Validate a parsed config mapping into an :class:`ExperimentSpec`."""
    if "kind" not in data:
        raise ConfigError("missing required key", "kind")
    kind = data["kind"]
    if kind not in KINDS:
        raise ConfigError(f"must be one of {', '.join(KINDS)}", "kind", _line_of(text, "kind"))
    for key, val in data.items():
        if key in _TABLES:
            if not isinstance(val, dict):
                raise ConfigError("expected a table", key, _line_of(text, key))
        elif key not in _TOP_KEYS:
            raise ConfigError("unknown key", key, _line_of(text, key))
    merged = _merge(_KIND_DEFAULTS[kind], data)

    tables = {name: _build_table(name, cls, merged.get(name, {}), text) for name, cls in _TABLES.items()}
    top = {k: _as_tuple(v) for k, v in merged.items() if k in _TOP_KEYS}
    spec = ExperimentSpec(
        **top,
        scenario=ScenarioTemplate(tables["system"], tables["channel"], tables["geometry"], tables["link"]),
        bcd=tables["bcd"],
        hybrid=tables["hybrid"],
    )
    validate(spec, text)
    return spec


def _check(cond, message, path, text):
    if not cond:
        raise ConfigError(message, path, _line_of(text, path.split(".")[-1]))


def validate(spec, text=None):
    _check(isinstance(spec.trials, int) and spec.trials >= 1, "must be an integer >= 1", "trials", text)
    _check(isinstance(spec.seed, int) and 0 <= spec.seed < 2**64, "must be a 64-bit unsigned integer", "seed", text)
    _check(isinstance(spec.workers, int) and spec.workers >= 1, "must be an integer >= 1", "workers", text)
    _check(len(spec.solvers) > 0, "must not be empty", "solvers", text)
    for s in spec.solvers:
        _check(s in SOLVERS, f"unknown solver {s!r}; choose from {', '.join(SOLVERS)}", "solvers", text)
    _check(len(spec.eta) > 0, "must not be empty", "eta", text)
    for e in spec.eta:
        _check(isinstance(e, (int, float)) and 0.0 <= e <= 1.0, "values must lie in [0, 1]", "eta", text)
    _check(len(spec.power_dbm) > 0, "must not be empty", "power_dbm", text)
    dims = spec.scenario.system
    if spec.kind == "rf-sweep":
        _check(len(spec.n_rf) > 0, "must not be empty for rf-sweep", "n_rf", text)
        for n in spec.n_rf:
            _check(isinstance(n, int) and 1 <= n <= dims.n_tx, f"values must lie in [1, {dims.n_tx}]", "n_rf", text)
    if spec.n_rf_rx is not None:
        _check(1 <= spec.n_rf_rx <= dims.n_rx, f"must lie in [1, {dims.n_rx}]", "n_rf_rx", text)
    start, stop, step = spec.angles_deg
    _check(step > 0 and stop >= start, "grid contains no angles (need step > 0, stop >= start)", "angles_deg", text)
    _check(-90.0 <= start and stop <= 90.0, "angles must lie in [-90, 90] degrees", "angles_deg", text)
    for name in ("cons1", "cons2"):
        v = getattr(spec, name)
        _check(v is None or v > 0, "must be positive", name, text)
    if spec.bcd.tol <= 0 or spec.bcd.max_iter < 1:
        raise ConfigError("tol must be positive and max_iter >= 1", "bcd", _line_of(text, "bcd"))


def load_config(path):
    """Read and validate a TOML experiment file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return loads_config(text)


def loads_config(text):
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    return spec_from_dict(data, text)


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def spec_to_dict(spec):
    out = {}
    for f in fields(ExperimentSpec):
        if f.name in ("scenario", "bcd", "hybrid"):
            continue
        v = getattr(spec, f.name)
        if v is not None:
            out[f.name] = _plain(v)
    tables = {
        "system": spec.scenario.system,
        "channel": spec.scenario.channel,
        "geometry": spec.scenario.geometry,
        "link": spec.scenario.link,
        "bcd": spec.bcd,
        "hybrid": spec.hybrid,
    }
    for name, obj in tables.items():
        out[name] = {k: _plain(v) for k, v in asdict(obj).items() if v is not None}
    return out


def dumps_config(spec):
    return tomli_w.dumps(spec_to_dict(spec))
