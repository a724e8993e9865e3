"""Scenario configuration ingestion.

Scenario files are flat ``key = value`` text with dotted sections, read with
python-dotenv. See docs/config_schema.md for the full key list.
"""
from __future__ import annotations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import io
import math
import re

import numpy as np
from dotenv import dotenv_values  # type: ignore

from . import config
from .ecbf import safe_set_membership
from .errors import ChannelConfigError, ScenarioParseError
from .models import (
    AuditSpec,
    ChannelSpec,
    NominalSpec,
    OutputChannel,
    PlanarDroneParams,
    RomAdapterParams,
    Scenario,
    Setpoint,
    SystemModel,
)
from .systems import DRONE_WITH_ROM, MODEL_NAMES, project_drone_to_rom, resolve_models

__all__ = [
    "load_scenario",
    "parse_scenario",
    "build_channels",
    "shrink_channels",
]

_TOP_KEYS = {"name", "model", "x0", "t_final", "dt", "integrator", "seed"}
_MODEL_KEYS = {"gravity", "theta_margin"}
_NOMINAL_KEYS = {"kp", "kd", "kp_x", "kd_x", "theta_cmd_max"}
_ADAPTER_KEYS = {"kp_theta", "kd_theta", "box_margin"}
_AUDIT_KEYS = {"tolerance", "levels"}
_CHANNEL_RE = re.compile(r"^channel\.([A-Za-z_][A-Za-z0-9_]*)\.(lower|upper|roots)$")
_SETPOINT_RE = re.compile(r"^setpoint\.(\d+)\.(time|target)$")


class _Fields:
    """Raw key/value pairs plus the line each key came from."""

    def __init__(self, values: Dict[str, Optional[str]], lines: Dict[str, int], path: Optional[str]):
        self.values = values
        self.lines = lines
        self.path = path

    def error(self, key: Optional[str], detail: str) -> ScenarioParseError:
        return ScenarioParseError(detail, path=self.path, line=self.lines.get(key or ""), field=key)

    def has(self, key: str) -> bool:
        return key in self.values

    def text(self, key: str, default: Optional[str] = None) -> str:
        raw = self.values.get(key)
        if raw is None or raw.strip() == "":
            if default is None:
                raise self.error(key, "missing required value")
            return default
        return raw.strip()

    def number(self, key: str, default: Optional[float] = None) -> float:
        if not self.has(key) and default is not None:
            return float(default)
        raw = self.text(key)
        try:
            val = float(raw)
        except ValueError:
            raise self.error(key, f"expected a number, got '{raw}'") from None
        if not math.isfinite(val):
            raise self.error(key, f"value must be finite, got '{raw}'")
        return val

    def integer(self, key: str, default: int) -> int:
        if not self.has(key):
            return default
        raw = self.text(key)
        try:
            return int(raw)
        except ValueError:
            raise self.error(key, f"expected an integer, got '{raw}'") from None

    def vector(self, key: str) -> Tuple[float, ...]:
        raw = self.text(key)
        try:
            vals = tuple(float(p) for p in raw.replace(" ", "").split(",") if p != "")
        except ValueError:
            raise self.error(key, f"expected comma-separated numbers, got '{raw}'") from None
        if not vals or not all(math.isfinite(v) for v in vals):
            raise self.error(key, f"expected finite comma-separated numbers, got '{raw}'")
        return vals


def _prescan(text: str, path: Optional[str]) -> Dict[str, int]:
    lines: Dict[str, int] = {}
    for no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ScenarioParseError(f"expected 'key = value', got '{stripped}'", path=path, line=no)
        key = stripped.split("=", 1)[0].strip()
        if not key:
            raise ScenarioParseError("empty key", path=path, line=no)
        if key in lines:
            raise ScenarioParseError(f"duplicate key (first set on line {lines[key]})",
                                     path=path, line=no, field=key)
        lines[key] = no
    return lines


def _check_known(fields: _Fields) -> None:
    for key in fields.values:
        if key in _TOP_KEYS or _CHANNEL_RE.match(key) or _SETPOINT_RE.match(key):
            continue
        section, _, rest = key.partition(".")
        allowed = {"model": _MODEL_KEYS, "nominal": _NOMINAL_KEYS,
                   "adapter": _ADAPTER_KEYS, "audit": _AUDIT_KEYS}.get(section)
        if allowed is None or rest not in allowed:
            raise fields.error(key, "unknown key")


def _channels(fields: _Fields) -> List[ChannelSpec]:
    names: List[str] = []
    for key in fields.values:
        mt = _CHANNEL_RE.match(key)
        if mt and mt.group(1) not in names:
            names.append(mt.group(1))
    specs = []
    for name in names:
        lower = fields.number(f"channel.{name}.lower")
        upper = fields.number(f"channel.{name}.upper")
        if not upper > lower:
            raise fields.error(f"channel.{name}.upper",
                               f"channel '{name}': upper bound {upper} must exceed lower bound {lower}")
        roots = fields.vector(f"channel.{name}.roots")
        specs.append(ChannelSpec(name=name, lower=lower, upper=upper, roots=roots))
    return specs


def _setpoints(fields: _Fields, state_dim: int) -> List[Setpoint]:
    indices = sorted({int(mt.group(1)) for mt in map(_SETPOINT_RE.match, fields.values) if mt})
    if not indices:
        raise fields.error(None, "at least one setpoint (setpoint.0.time / setpoint.0.target) is required")
    out: List[Setpoint] = []
    for i in indices:
        t = fields.number(f"setpoint.{i}.time")
        target = fields.vector(f"setpoint.{i}.target")
        if len(target) != state_dim:
            raise fields.error(f"setpoint.{i}.target", f"expected {state_dim} entries, got {len(target)}")
        if out and not t > out[-1].time:
            raise fields.error(f"setpoint.{i}.time", "setpoint times must be strictly increasing")
        out.append(Setpoint(time=t, target=target))
    if out[0].time > 0:
        raise fields.error(f"setpoint.{indices[0]}.time", "the first setpoint must start at t <= 0")
    return out


def build_channels(scenario: Scenario, model: SystemModel) -> List[OutputChannel]:
    """OutputChannels in the model's output order; every output needs exactly one channel."""
    by_name = {spec.name: spec for spec in scenario.channels}
    extra = set(by_name) - set(model.output_names)
    if extra:
        raise ChannelConfigError(f"model '{model.name}' has no output named '{sorted(extra)[0]}'",
                                 channel=sorted(extra)[0])
    out = []
    for ev in model.outputs:
        spec = by_name.get(ev.name)
        if spec is None:
            raise ChannelConfigError(f"no bounds given for output of model '{model.name}'", channel=ev.name)
        out.append(OutputChannel(evaluator=ev, lower=spec.lower, upper=spec.upper, roots=np.array(spec.roots)))
    return out


def shrink_channels(channels: Sequence[OutputChannel], margin: float) -> List[OutputChannel]:
    """Channels with both bounds pulled inward by margin."""
    return [OutputChannel(evaluator=ch.evaluator, lower=ch.lower + margin, upper=ch.upper - margin, roots=ch.roots)
            for ch in channels]


def parse_scenario(text: str, path: Optional[str] = None) -> Scenario:
    lines = _prescan(text, path)
    values = dotenv_values(stream=io.StringIO(text), interpolate=False)
    fields = _Fields(dict(values), lines, path)
    _check_known(fields)

    model_name = fields.text("model")
    if model_name not in MODEL_NAMES:
        raise fields.error("model", f"unknown model '{model_name}' (expected one of {', '.join(MODEL_NAMES)})")
    model_params = {k: fields.number(f"model.{k}") for k in sorted(_MODEL_KEYS) if fields.has(f"model.{k}")}
    try:
        drone_params = PlanarDroneParams(**model_params)
        plant, filter_model = resolve_models(model_name, drone_params)
    except ChannelConfigError as err:
        key = next((f"model.{k}" for k in model_params), "model")
        raise fields.error(key, str(err)) from None

    dt = fields.number("dt", config.DEFAULT_DT)
    if not dt > 0:
        raise fields.error("dt", f"dt must be positive, got {dt}")
    t_final = fields.number("t_final")
    if not t_final >= dt:
        raise fields.error("t_final", f"t_final ({t_final}) must be at least dt ({dt})")
    integrator = fields.text("integrator", config.DEFAULT_INTEGRATOR)
    if integrator not in ("rk4", "euler"):
        raise fields.error("integrator", f"integrator must be 'rk4' or 'euler', got '{integrator}'")

    x0 = np.array(fields.vector("x0"))
    if x0.size != plant.state_dim:
        raise fields.error("x0", f"expected {plant.state_dim} entries for model '{model_name}', got {x0.size}")
    if not plant.in_region(x0):
        raise fields.error("x0", "initial state lies outside the valid region of the model")

    nominal = NominalSpec(**{k: fields.number(f"nominal.{k}") for k in _NOMINAL_KEYS if fields.has(f"nominal.{k}")})
    adapter_values = {k: fields.number(f"adapter.{k}") for k in _ADAPTER_KEYS if fields.has(f"adapter.{k}")}
    try:
        adapter = RomAdapterParams(**adapter_values)
    except ChannelConfigError as err:
        key = "adapter.box_margin" if "margin" in str(err) else "adapter.kp_theta"
        raise fields.error(key, str(err)) from None

    levels = fields.text("audit.levels", "all")
    if levels not in ("all", "outputs"):
        raise fields.error("audit.levels", f"audit.levels must be 'all' or 'outputs', got '{levels}'")
    tolerance = fields.number("audit.tolerance") if fields.has("audit.tolerance") else None
    if tolerance is not None and not tolerance > 0:
        raise fields.error("audit.tolerance", "audit.tolerance must be positive")

    scenario = Scenario(
        name=fields.text("name", Path(path).stem if path else "scenario"),
        model=model_name,
        model_params=model_params,
        channels=_channels(fields),
        setpoints=_setpoints(fields, plant.state_dim),
        x0=x0,
        t_final=t_final,
        dt=dt,
        integrator=integrator,
        nominal=nominal,
        adapter=adapter,
        audit=AuditSpec(tolerance=tolerance, levels=levels),
        seed=fields.integer("seed", config.DEFAULT_SEED),
    )

    try:
        channels = build_channels(scenario, filter_model)
    except ChannelConfigError as err:
        key = f"channel.{err.channel}.roots" if err.channel and fields.has(f"channel.{err.channel}.roots") else None
        raise fields.error(key, str(err)) from None

    if model_name == DRONE_WITH_ROM and adapter.box_margin > 0:
        narrow = min(channels, key=lambda ch: ch.width)
        if not 2 * adapter.box_margin < narrow.width:
            raise fields.error("adapter.box_margin",
                               f"box margin {adapter.box_margin} leaves no room in channel '{narrow.name}' "
                               f"[{narrow.lower}, {narrow.upper}]")
        channels = shrink_channels(channels, adapter.box_margin)

    xf = project_drone_to_rom(x0) if model_name == DRONE_WITH_ROM else x0
    scenario.x0_outside_safe_set = not all(mb.member for mb in safe_set_membership(channels, xf))
    return scenario


def load_scenario(path: Union[str, Path]) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as err:
        raise ScenarioParseError(f"cannot read scenario file: {err.strerror}", path=str(p)) from None
    return parse_scenario(text, path=str(p))
