# tubegrid/conductor/config.py
"""
Scenario configuration: YAML (or JSON) documents validated by a strict
pydantic schema. Nodes are numbered from 1 in scenario files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from conductor.disturbance import DisturbanceProfile
from grid.control import DesignOptions, GainSet, ReferenceSchedule
from grid.errors import ConfigError
from grid.netmodel import (DEFAULT_CAPACITANCE, DEFAULT_GRID_FREQUENCY, DEFAULT_LINE_INDUCTANCE,
                           DEFAULT_LINE_RESISTANCE, NetworkModel)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_CONFIG = "config/scenarios.yaml"
DEFAULT_SCENARIO = "six_node"

PerNode = Union[float, List[float]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _length_issue(value, expected: int, name: str) -> Optional[str]:
    if isinstance(value, list) and len(value) != expected:
        return f"{name}: expected a scalar or {expected} values, got {len(value)}"
    return None


class NetworkSection(_Strict):
    node_count: int = Field(ge=1)
    edges: List[Tuple[int, int]] = Field(default_factory=list)
    capacitance: PerNode = DEFAULT_CAPACITANCE
    line_resistance: PerNode = DEFAULT_LINE_RESISTANCE
    line_inductance: PerNode = DEFAULT_LINE_INDUCTANCE
    grid_frequency: float = DEFAULT_GRID_FREQUENCY
    rated_voltage: PerNode = 110.0
    nominal_P: PerNode = 0.0
    nominal_Q: PerNode = 0.0
    dP_max: PerNode = 0.0
    dQ_max: PerNode = 0.0
    v_max: PerNode = 6.0
    constraint_center: Optional[PerNode] = None

    @model_validator(mode="after")
    def _lengths(self):
        n, m = self.node_count, len(self.edges)
        issues = [
            _length_issue(getattr(self, name), n, name)
            for name in ("capacitance", "rated_voltage", "nominal_P", "nominal_Q",
                         "dP_max", "dQ_max", "v_max", "constraint_center")
        ] + [
            _length_issue(getattr(self, name), m, name)
            for name in ("line_resistance", "line_inductance")
        ]
        issues = [i for i in issues if i]
        if issues:
            raise ValueError("; ".join(issues))
        return self

    def to_model(self) -> NetworkModel:
        return NetworkModel.build(
            node_count=self.node_count,
            edges=[(i - 1, j - 1) for i, j in self.edges],
            capacitance=self.capacitance,
            line_resistance=self.line_resistance,
            line_inductance=self.line_inductance,
            grid_frequency=self.grid_frequency,
            rated_voltage=self.rated_voltage,
            nominal_P=self.nominal_P,
            nominal_Q=self.nominal_Q,
            dP_max=self.dP_max,
            dQ_max=self.dQ_max,
            v_max=self.v_max,
            constraint_center=self.constraint_center,
        )


class AutoGains(_Strict):
    e_bar: PerNode
    z_tilde_m: PerNode
    delta: PerNode
    safety: float = Field(default=1.05, ge=1.0)
    samples: int = Field(default=1000, ge=2)
    K_floor: float = Field(default=1.0, gt=0)
    K_d_floor: float = Field(default=1.0, gt=0)
    K_q: Optional[PerNode] = None
    k_Id: PerNode = 50.0
    k_Iq: PerNode = 50.0

    def options(self) -> DesignOptions:
        return DesignOptions(safety=self.safety, samples=self.samples, K_floor=self.K_floor,
                             K_d_floor=self.K_d_floor, K_q=self.K_q, k_Id=self.k_Id, k_Iq=self.k_Iq)


class ExplicitGains(_Strict):
    K: PerNode
    K_d: PerNode
    K_q: Optional[PerNode] = None
    k_Id: PerNode
    k_Iq: PerNode
    M: Optional[PerNode] = None
    z_tilde_m: Optional[PerNode] = None
    e_bar: PerNode
    delta: PerNode

    @model_validator(mode="after")
    def _one_scale(self):
        if (self.M is None) == (self.z_tilde_m is None):
            raise ValueError("give exactly one of M and z_tilde_m")
        return self

    def to_gainset(self, n: int) -> GainSet:
        return GainSet.build(n, K=self.K, K_d=self.K_d, K_q=self.K_q, k_Id=self.k_Id,
                             k_Iq=self.k_Iq, e_bar=self.e_bar, delta=self.delta,
                             M=self.M, z_tilde_m=self.z_tilde_m)


class GainsSection(_Strict):
    auto: Optional[AutoGains] = None
    explicit: Optional[ExplicitGains] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.auto is None) == (self.explicit is None):
            raise ValueError("exactly one of 'auto' and 'explicit' gains is required")
        return self


class ReferencePoint(_Strict):
    t: float = Field(ge=0.0)
    rms: Optional[PerNode] = None
    shifted: Optional[PerNode] = None

    @model_validator(mode="after")
    def _one_frame(self):
        if (self.rms is None) == (self.shifted is None):
            raise ValueError("give exactly one of 'rms' and 'shifted'")
        return self


class DisturbanceSection(_Strict):
    kind: Literal["zero", "piecewise_random", "square_wave", "sinusoid"] = "square_wave"
    dwell: float = Field(default=0.02, gt=0)
    amplitude: float = Field(default=1.0, ge=0.0, le=1.0)


class SimSection(_Strict):
    dt: float = Field(default=1e-5, gt=0)
    t_end: float = Field(default=0.6, ge=0)
    seed: int = Field(default=0, ge=0)
    out_dir: str = "results"
    output_stride: int = Field(default=1, ge=1)
    initial_state: Literal["rated", "equilibrium"] = "rated"
    allow_uncertified: bool = False
    settle_tolerance: float = Field(default=0.05, gt=0)


class CertifySection(_Strict):
    n_boundary: int = Field(default=720, ge=4)
    n_disturbance: int = Field(default=32, ge=0)
    z_samples: int = Field(default=11, ge=2)


class RunConfig(_Strict):
    schema_version: int = SCHEMA_VERSION
    name: str = "scenario"
    description: Optional[str] = None
    network: NetworkSection
    gains: GainsSection
    references: List[ReferencePoint] = Field(default_factory=list)
    disturbance: DisturbanceSection = Field(default_factory=DisturbanceSection)
    sim: SimSection = Field(default_factory=SimSection)
    certify: CertifySection = Field(default_factory=CertifySection)
    compare: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}; expected {SCHEMA_VERSION}")
        n = self.network.node_count
        issues = []
        for k, point in enumerate(self.references):
            value = point.rms if point.rms is not None else point.shifted
            issue = _length_issue(value, n, f"references[{k}]")
            if issue:
                issues.append(issue)
        times = [p.t for p in self.references]
        if times and times[0] != 0.0:
            issues.append("references: first breakpoint must be at t=0")
        if any(b <= a for a, b in zip(times, times[1:])):
            issues.append("references: times must be strictly increasing")
        if issues:
            raise ValueError("; ".join(issues))
        return self

    # ------------------------------------------------------------------

    def build_model(self) -> NetworkModel:
        return self.network.to_model()

    def reference_schedule(self, model: NetworkModel) -> ReferenceSchedule:
        """Shifted references; rated voltage for every node when none are given"""
        n = model.node_count
        if not self.references:
            return ReferenceSchedule.constant(np.zeros(n))
        points = []
        for p in self.references:
            if p.rms is not None:
                points.append((p.t, np.broadcast_to(np.asarray(p.rms, dtype=float), (n,)) - model.rated_voltage))
            else:
                points.append((p.t, np.broadcast_to(np.asarray(p.shifted, dtype=float), (n,))))
        return ReferenceSchedule.from_breakpoints(points)

    def disturbance_profile(self) -> DisturbanceProfile:
        return DisturbanceProfile(kind=self.disturbance.kind, seed=self.sim.seed,
                                  dwell=self.disturbance.dwell, amplitude=self.disturbance.amplitude)

    def with_overrides(self, **overrides) -> "RunConfig":
        """Apply CLI overrides; None values are ignored"""
        sim_keys = {"seed", "dt", "t_end", "out_dir", "allow_uncertified"}
        sim_update = {k: v for k, v in overrides.items() if k in sim_keys and v is not None}
        top_update = {}
        if overrides.get("compare") is not None:
            top_update["compare"] = overrides["compare"]
        if overrides.get("gains") is not None:
            top_update["gains"] = overrides["gains"]
        data = self.model_dump()
        data["sim"].update(sim_update)
        data.update({k: (v.model_dump() if isinstance(v, BaseModel) else v) for k, v in top_update.items()})
        return _validate(data)


def _format_loc(loc) -> str:
    path = ""
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path += ("." if path else "") + str(part)
    return path or "<root>"


def _load_document(text: str) -> Any:
    """JSON first (YAML 1.1 reads '1e-05' as a string), then YAML"""
    try:
        return json.loads(text)
    except ValueError:
        return yaml.safe_load(text)


def _validate(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        issues = [f"{_format_loc(err['loc'])}: {err['msg']}" for err in exc.errors()]
        raise ConfigError(issues) from exc


def parse_config(text: str, scenario: Optional[str] = None) -> RunConfig:
    """
    Parse a scenario document.

    A document with a top-level 'scenarios' mapping is a scenario library
    and one entry is selected by name; anything else is a single scenario.
    """
    try:
        data = _load_document(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"<document>: not valid YAML/JSON: {exc}"]) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(["<root>: expected a mapping"])

    if "scenarios" in data:
        library = data["scenarios"] or {}
        name = scenario or DEFAULT_SCENARIO
        if name not in library:
            raise ConfigError([f"scenarios: no scenario named {name!r}; available: {sorted(library)}"])
        entry = dict(library[name] or {})
        entry.setdefault("name", name)
        if "schema_version" in data and "schema_version" not in entry:
            entry["schema_version"] = data["schema_version"]
        data = entry
    config = _validate(data)
    logger.debug(f"parsed scenario {config.name!r} ({config.network.node_count} nodes)")
    return config


def load_config(path: Union[str, Path] = DEFAULT_CONFIG, scenario: Optional[str] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read configuration: {exc}"]) from exc
    return parse_config(text, scenario)


def scenario_names(path: Union[str, Path] = DEFAULT_CONFIG) -> List[str]:
    """Names in a scenario library; empty for a single-scenario document"""
    path = Path(path)
    try:
        data = _load_document(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError([f"{path}: cannot read configuration: {exc}"]) from exc
    if isinstance(data, dict) and isinstance(data.get("scenarios"), dict):
        return list(data["scenarios"])
    return []


def load_gains_file(path: Union[str, Path]) -> ExplicitGains:
    """Gains written by the design command, as an explicit gains section"""
    path = Path(path)
    try:
        data = _load_document(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError([f"{path}: cannot read gains: {exc}"]) from exc
    if isinstance(data, dict) and "gains" in data:
        data = data["gains"]
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: expected a gains mapping"])
    # stored alongside M for readability; M is authoritative
    if "M" in data:
        data = {k: v for k, v in data.items() if k != "z_tilde_m"}
    try:
        return ExplicitGains.model_validate(data)
    except ValidationError as exc:
        raise ConfigError([f"gains.{_format_loc(err['loc'])}: {err['msg']}" for err in exc.errors()]) from exc
