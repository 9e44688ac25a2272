"""Run configuration: one YAML file, defaults from the published calibration.

Every field can be overridden on the command line by its dotted name, e.g.
``--simulation.dead_time 5`` or ``--reconstruction.smoothing_weight=1e-3``.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .analysis import Mesh
from .detector import CALIBRATED_DARK, CALIBRATED_EFFICIENCY, EQUAL_SPLIT, DetectorParams
from .errors import ConfigError, ParameterError
from .probes import DEFAULT_TAIL_EPSILON, CoherentProbe, parse_probe_spec
from .reconstruction import ReconstructionConfig
from .simulator import SimulationConfig

DEFAULT_PROBE_SPEC = "geometric:18,0.5,46.8"


def _floats(n=None):
    def conv(v):
        if not isinstance(v, (list, tuple)):
            raise ValueError("expected a list")
        out = [float(x) for x in v]
        if n is not None and len(out) != n:
            raise ValueError(f"expected {n} entries, got {len(out)}")
        return out
    return conv


def _optional(conv):
    return lambda v: None if v is None else conv(v)


def _int(v):
    if isinstance(v, bool):
        raise ValueError("expected an integer")
    if isinstance(v, float) and not v.is_integer():
        raise ValueError(f"expected an integer, got {v}")
    return int(v)


def _float(v):
    if isinstance(v, bool):
        raise ValueError("expected a number")
    return float(v)


SCHEMA = {
    "detector": {
        "eta": (list(CALIBRATED_EFFICIENCY), _floats(4)),
        "p_dark": (list(CALIBRATED_DARK), _floats(4)),
        "split": (list(EQUAL_SPLIT), _floats(4)),
    },
    "probes": {
        "spec": (DEFAULT_PROBE_SPEC, str),
        "means": (None, _optional(_floats())),
        "tail_epsilon": (DEFAULT_TAIL_EPSILON, _float),
    },
    "simulation": {
        "rep_rate": (9.0e4, _float),
        "dead_time": (10, _int),
        "gating": ("smart", str),
        "seed": (20150101, _int),
        "pulses_per_probe": (100_000, _int),
        "shards": (1, _int),
        "workers": (1, _int),
    },
    "reconstruction": {
        "smoothing_weight": (1e-2, _float),
        "regularizer": ("first", str),
        "weighting": ("none", str),
        "max_iterations": (200_000, _int),
        "kkt_tolerance": (1e-9, _float),
        "truncation": (None, _optional(_int)),
    },
    "theory": {"truncation": (60, _int)},
    "analysis": {"extent": (8.0, _float), "points": (161, _int)},
    "output": {"dir": ("out", str)},
}


@dataclass
class RunConfig:
    detector: DetectorParams
    probes: list
    tail_epsilon: float
    simulation: SimulationConfig
    reconstruction: ReconstructionConfig
    theory_truncation: int
    mesh: Mesh
    out_dir: Path
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def digest(self) -> str:
        """SHA-256 of the resolved configuration (output paths excluded)."""
        doc = {k: v for k, v in self.raw.items() if k != "output"}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def default_dict() -> dict:
    return {sec: {k: v[0] for k, v in fields.items()} for sec, fields in SCHEMA.items()}


def _parse_scalar(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def resolve(doc: Optional[dict] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Merge ``doc`` and dotted ``overrides`` over the defaults and validate."""
    raw = default_dict()
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    for section, values in doc.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        for key, value in values.items():
            _set(raw, f"{section}.{key}", value)
    for dotted, value in (overrides or {}).items():
        _set(raw, dotted, _parse_scalar(value) if isinstance(value, str) else value)
    return _build(raw)


def _set(raw, dotted, value):
    section, _, key = dotted.partition(".")
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"unknown config field {dotted!r}")
    conv = SCHEMA[section][key][1]
    try:
        raw[section][key] = conv(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{dotted}: invalid value {value!r} ({exc})") from None


def _build(raw) -> RunConfig:
    def guard(name, fn):
        try:
            return fn()
        except (ParameterError, TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: {exc}") from None

    p = raw["probes"]
    if p["means"] is not None:
        probes = guard("probes.means", lambda: [CoherentProbe(m) for m in p["means"]])
        if not probes:
            raise ConfigError("probes.means: empty list")
    else:
        probes = guard("probes.spec", lambda: parse_probe_spec(p["spec"]))
    if not 0 < p["tail_epsilon"] < 1:
        raise ConfigError("probes.tail_epsilon: must lie in (0, 1)")
    if raw["theory"]["truncation"] < 0:
        raise ConfigError("theory.truncation: must be >= 0")
    mesh = raw["analysis"]
    if mesh["points"] < 1 or mesh["extent"] < 0:
        raise ConfigError("analysis: points must be >= 1 and extent >= 0")
    return RunConfig(
        detector=guard("detector", lambda: DetectorParams(**raw["detector"])),
        probes=probes,
        tail_epsilon=p["tail_epsilon"],
        simulation=guard("simulation", lambda: SimulationConfig(**raw["simulation"])),
        reconstruction=guard("reconstruction", lambda: ReconstructionConfig(**raw["reconstruction"])),
        theory_truncation=raw["theory"]["truncation"],
        mesh=Mesh(extent=mesh["extent"], points=mesh["points"]),
        out_dir=Path(raw["output"]["dir"]),
        raw=raw,
    )


def load(path=None, overrides=None) -> RunConfig:
    doc = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark
            where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
            raise ConfigError(f"{path}: YAML parse error at {where}: {exc.problem}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: YAML parse error: {exc}") from None
    try:
        return resolve(doc, overrides)
    except ConfigError as exc:
        if path is not None:
            raise ConfigError(f"{path}: {exc}") from None
        raise


def dump_defaults() -> str:
    return yaml.safe_dump(default_dict(), sort_keys=False)
