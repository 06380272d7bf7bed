"""Strict experiment-configuration parsing for the batch CLI.

A configuration is one YAML mapping with nested blocks:

``path``
    Flat homotopy-path description handed to :func:`htmdp.paths.make_path`
    (``family`` plus that family's keyword arguments).
``geometry``
    Certificate-audit settings: grid resolution, kink window ``delta``,
    margin ``xi``, tie threshold, and the tube probe lists ``tube_taus`` /
    ``tube_eps``.
``scheduler``
    Keyword arguments for :class:`htmdp.scheduler.SchedulerConfig`.  Base
    hyper-parameter values (``eta0``, ``nu0``, ``lambda0``, ``d0``, ``b0``)
    are configured here, the single source of truth the scheduler maps from.
``agent``
    Run-harness settings: horizon ``t``, ``seeds``, the drift ``process``
    sub-block, MCTS ``model_learning`` and static-baseline overrides, plus
    :class:`htmdp.agents.AgentConfig` fields.
``stability``
    Sweep grid for the scheduler-stability command: horizon, seeds,
    ``h_values``, ``delta_hys_values`` (``.inf`` allowed), proxy scale, and
    the large-change threshold ``eps``.
``output``
    Destination directory and the formats to emit.

Parsing is strict: an unknown key anywhere is an error, as is a value that
cannot be coerced to the declared type.  Numeric fields accept YAML strings
such as ``"1e-3"`` (which YAML 1.1 does not resolve to a float on its own).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from htmdp.agents import AgentConfig
from htmdp.paths import MdpPath, make_path
from htmdp.scheduler import SchedulerConfig

__all__ = [
    "ConfigError",
    "GeometryBlock",
    "ProcessBlock",
    "AgentBlock",
    "StabilityBlock",
    "OutputBlock",
    "ExperimentConfig",
    "parse_config",
    "load_config",
]


class ConfigError(ValueError):
    """Raised for malformed or unknown configuration content."""


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeometryBlock:
    """Settings for certificate audits and tube probes."""

    grid: int = 201
    delta: float | None = None
    xi: float | None = None
    tie_threshold: float = 1e-3
    tube_taus: tuple[float, ...] = ()
    tube_eps: tuple[float, ...] = ()


@dataclass(frozen=True)
class ProcessBlock:
    """Drift-process description for agent runs."""

    kind: str = "linear_ramp"
    horizon: int | None = None
    tau_start: float = 0.0
    tau_end: float = 1.0
    noise: float = 0.5
    freeze_at: int | None = None


@dataclass(frozen=True)
class AgentBlock:
    """Run-harness settings shared by the RL and MCTS runners."""

    t: int
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    process: ProcessBlock = field(default_factory=ProcessBlock)
    model_learning: str = "true_model"
    static_depth: int | None = None
    static_budget: int | None = None
    agent: AgentConfig = field(default_factory=AgentConfig)


@dataclass(frozen=True)
class StabilityBlock:
    """Sweep grid for the scheduler-stability command."""

    t: int = 2000
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    h_values: tuple[int, ...] = (1, 2, 4, 8)
    delta_hys_values: tuple[float, ...] = (0.01, 0.02, 0.04, math.inf)
    proxy_scale: float = 1.0
    eps: float = 0.05


@dataclass(frozen=True)
class OutputBlock:
    """Where artefacts land and which formats are emitted."""

    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully parsed experiment description.

    ``path`` is ``None`` when the config omits the path block (allowed for
    the scheduler-stability command, which does not touch an MDP path).
    """

    path: MdpPath | None
    path_spec: Mapping[str, Any] | None
    geometry: GeometryBlock
    scheduler: SchedulerConfig | None
    agent: AgentBlock | None
    stability: StabilityBlock
    output: OutputBlock

    def require_path(self) -> MdpPath:
        if self.path is None:
            raise ConfigError("this command requires a 'path' block")
        return self.path

    def require_scheduler(self) -> SchedulerConfig:
        if self.scheduler is None:
            raise ConfigError("this command requires a 'scheduler' block")
        return self.scheduler

    def require_agent(self) -> AgentBlock:
        if self.agent is None:
            raise ConfigError("this command requires an 'agent' block")
        return self.agent


# ---------------------------------------------------------------------------
# Coercion helpers
# ---------------------------------------------------------------------------


def _coerce_float(value: Any, where: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        text = value.strip()
        # YAML spells infinities as .inf; accept that form in strings too.
        if text in (".inf", "+.inf"):
            return math.inf
        if text == "-.inf":
            return -math.inf
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{where}: cannot parse {value!r} as a number") from None
    raise ConfigError(f"{where}: expected a number, got {type(value).__name__}")


def _coerce_int(value: Any, where: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected an integer, got a boolean")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{where}: cannot parse {value!r} as an integer") from None
    raise ConfigError(f"{where}: expected an integer, got {type(value).__name__}")


def _coerce_bool(value: Any, where: str) -> bool:
    if isinstance(value, bool):
        return value
    raise ConfigError(f"{where}: expected a boolean, got {type(value).__name__}")


def _coerce_str(value: Any, where: str) -> str:
    if isinstance(value, str):
        return value
    raise ConfigError(f"{where}: expected a string, got {type(value).__name__}")


def _coerce_float_list(value: Any, where: str) -> tuple[float, ...]:
    if not isinstance(value, Sequence) or isinstance(value, (str, bytes)):
        raise ConfigError(f"{where}: expected a list of numbers")
    return tuple(_coerce_float(v, f"{where}[{i}]") for i, v in enumerate(value))


def _coerce_int_list(value: Any, where: str) -> tuple[int, ...]:
    if not isinstance(value, Sequence) or isinstance(value, (str, bytes)):
        raise ConfigError(f"{where}: expected a list of integers")
    return tuple(_coerce_int(v, f"{where}[{i}]") for i, v in enumerate(value))


def _coerce_seeds(value: Any, where: str) -> tuple[int, ...]:
    """An integer count ``n`` means seeds ``0..n-1``; a list is explicit."""
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected an integer or a list of integers")
    if isinstance(value, int):
        if value < 1:
            raise ConfigError(f"{where}: seed count must be >= 1")
        return tuple(range(value))
    seeds = _coerce_int_list(value, where)
    if not seeds:
        raise ConfigError(f"{where}: seed list must be nonempty")
    return seeds


def _require_mapping(value: Any, where: str) -> dict[str, Any]:
    if not isinstance(value, Mapping):
        raise ConfigError(f"{where}: expected a mapping of keys to values")
    out: dict[str, Any] = {}
    for key in value:
        if not isinstance(key, str):
            raise ConfigError(f"{where}: keys must be strings, got {key!r}")
        out[key] = value[key]
    return out


def _reject_unknown(remaining: Mapping[str, Any], where: str) -> None:
    if remaining:
        names = ", ".join(sorted(remaining))
        raise ConfigError(f"{where}: unknown key(s): {names}")


# Field-name sets derived from the dataclasses themselves so config parsing
# cannot drift from the runtime types.
_SCHEDULER_FIELDS = {f.name: f.type for f in dataclasses.fields(SchedulerConfig)}
_AGENT_CONFIG_FIELDS = {f.name for f in dataclasses.fields(AgentConfig)}
_SCHEDULER_INT_FIELDS = {"h", "w1", "w2", "d0", "dmax", "b0", "bmax"}
_SCHEDULER_BOOL_FIELDS = {"normalize"}
_AGENT_CONFIG_INT_FIELDS = {
    "episode_length",
    "minibatch_size",
    "buffer_capacity",
    "geo_grid",
    "proxy_period",
}
_AGENT_CONFIG_BOOL_FIELDS = {"gap_uses_target"}


# ---------------------------------------------------------------------------
# Block parsers
# ---------------------------------------------------------------------------


def _parse_path(block: Any) -> tuple[MdpPath, dict[str, Any]]:
    spec = _require_mapping(block, "path")
    try:
        path = make_path(dict(spec))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"path: {exc}") from exc
    return path, spec


def _parse_geometry(block: Any) -> GeometryBlock:
    data = _require_mapping(block, "geometry")
    kwargs: dict[str, Any] = {}
    if "grid" in data:
        kwargs["grid"] = _coerce_int(data.pop("grid"), "geometry.grid")
    if "delta" in data:
        raw = data.pop("delta")
        kwargs["delta"] = None if raw is None else _coerce_float(raw, "geometry.delta")
    if "xi" in data:
        raw = data.pop("xi")
        kwargs["xi"] = None if raw is None else _coerce_float(raw, "geometry.xi")
    if "tie_threshold" in data:
        kwargs["tie_threshold"] = _coerce_float(
            data.pop("tie_threshold"), "geometry.tie_threshold"
        )
    if "tube_taus" in data:
        kwargs["tube_taus"] = _coerce_float_list(data.pop("tube_taus"), "geometry.tube_taus")
    if "tube_eps" in data:
        kwargs["tube_eps"] = _coerce_float_list(data.pop("tube_eps"), "geometry.tube_eps")
    _reject_unknown(data, "geometry")
    geometry = GeometryBlock(**kwargs)
    if geometry.grid < 2:
        raise ConfigError("geometry.grid: must be >= 2")
    return geometry


def _parse_scheduler(block: Any) -> SchedulerConfig:
    data = _require_mapping(block, "scheduler")
    kwargs: dict[str, Any] = {}
    for key in list(data):
        if key not in _SCHEDULER_FIELDS:
            continue
        raw = data.pop(key)
        where = f"scheduler.{key}"
        if key in _SCHEDULER_BOOL_FIELDS:
            kwargs[key] = _coerce_bool(raw, where)
        elif key in _SCHEDULER_INT_FIELDS:
            kwargs[key] = _coerce_int(raw, where)
        else:
            kwargs[key] = _coerce_float(raw, where)
    _reject_unknown(data, "scheduler")
    try:
        return SchedulerConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"scheduler: {exc}") from exc


def _parse_process(block: Any) -> ProcessBlock:
    data = _require_mapping(block, "agent.process")
    kwargs: dict[str, Any] = {}
    if "kind" in data:
        kwargs["kind"] = _coerce_str(data.pop("kind"), "agent.process.kind")
    if "horizon" in data:
        raw = data.pop("horizon")
        kwargs["horizon"] = None if raw is None else _coerce_int(raw, "agent.process.horizon")
    if "tau_start" in data:
        kwargs["tau_start"] = _coerce_float(data.pop("tau_start"), "agent.process.tau_start")
    if "tau_end" in data:
        kwargs["tau_end"] = _coerce_float(data.pop("tau_end"), "agent.process.tau_end")
    if "noise" in data:
        kwargs["noise"] = _coerce_float(data.pop("noise"), "agent.process.noise")
    if "freeze_at" in data:
        raw = data.pop("freeze_at")
        kwargs["freeze_at"] = None if raw is None else _coerce_int(raw, "agent.process.freeze_at")
    _reject_unknown(data, "agent.process")
    return ProcessBlock(**kwargs)


def _parse_agent(block: Any) -> AgentBlock:
    data = _require_mapping(block, "agent")
    if "t" not in data:
        raise ConfigError("agent: missing required key 't'")
    t = _coerce_int(data.pop("t"), "agent.t")
    if t < 1:
        raise ConfigError("agent.t: must be >= 1")

    kwargs: dict[str, Any] = {"t": t}
    if "seeds" in data:
        kwargs["seeds"] = _coerce_seeds(data.pop("seeds"), "agent.seeds")
    if "process" in data:
        kwargs["process"] = _parse_process(data.pop("process"))
    if "model_learning" in data:
        kwargs["model_learning"] = _coerce_str(data.pop("model_learning"), "agent.model_learning")
    if "static_depth" in data:
        raw = data.pop("static_depth")
        kwargs["static_depth"] = None if raw is None else _coerce_int(raw, "agent.static_depth")
    if "static_budget" in data:
        raw = data.pop("static_budget")
        kwargs["static_budget"] = None if raw is None else _coerce_int(raw, "agent.static_budget")

    agent_kwargs: dict[str, Any] = {}
    for key in list(data):
        if key not in _AGENT_CONFIG_FIELDS:
            continue
        raw = data.pop(key)
        where = f"agent.{key}"
        if key in _AGENT_CONFIG_BOOL_FIELDS:
            agent_kwargs[key] = _coerce_bool(raw, where)
        elif key in _AGENT_CONFIG_INT_FIELDS:
            agent_kwargs[key] = _coerce_int(raw, where)
        else:
            agent_kwargs[key] = _coerce_float(raw, where)
    _reject_unknown(data, "agent")
    try:
        kwargs["agent"] = AgentConfig(**agent_kwargs)
    except ValueError as exc:
        raise ConfigError(f"agent: {exc}") from exc

    block_out = AgentBlock(**kwargs)
    if block_out.model_learning not in ("true_model", "ema_model"):
        raise ConfigError(
            "agent.model_learning: expected 'true_model' or 'ema_model', "
            f"got {block_out.model_learning!r}"
        )
    return block_out


def _parse_stability(block: Any) -> StabilityBlock:
    data = _require_mapping(block, "stability")
    kwargs: dict[str, Any] = {}
    if "t" in data:
        kwargs["t"] = _coerce_int(data.pop("t"), "stability.t")
    if "seeds" in data:
        kwargs["seeds"] = _coerce_seeds(data.pop("seeds"), "stability.seeds")
    if "h_values" in data:
        kwargs["h_values"] = _coerce_int_list(data.pop("h_values"), "stability.h_values")
    if "delta_hys_values" in data:
        kwargs["delta_hys_values"] = _coerce_float_list(
            data.pop("delta_hys_values"), "stability.delta_hys_values"
        )
    if "proxy_scale" in data:
        kwargs["proxy_scale"] = _coerce_float(data.pop("proxy_scale"), "stability.proxy_scale")
    if "eps" in data:
        kwargs["eps"] = _coerce_float(data.pop("eps"), "stability.eps")
    _reject_unknown(data, "stability")
    out = StabilityBlock(**kwargs)
    if out.t < 2:
        raise ConfigError("stability.t: must be >= 2")
    if not out.h_values or any(h < 1 for h in out.h_values):
        raise ConfigError("stability.h_values: must be a nonempty list of positive integers")
    if not out.delta_hys_values or any(d < 0 for d in out.delta_hys_values):
        raise ConfigError("stability.delta_hys_values: entries must be >= 0")
    if out.proxy_scale <= 0:
        raise ConfigError("stability.proxy_scale: must be > 0")
    if out.eps <= 0:
        raise ConfigError("stability.eps: must be > 0")
    return out


def _parse_output(block: Any) -> OutputBlock:
    data = _require_mapping(block, "output")
    kwargs: dict[str, Any] = {}
    if "directory" in data:
        kwargs["directory"] = _coerce_str(data.pop("directory"), "output.directory")
    if "formats" in data:
        raw = data.pop("formats")
        if not isinstance(raw, Sequence) or isinstance(raw, (str, bytes)):
            raise ConfigError("output.formats: expected a list of format names")
        formats = tuple(_coerce_str(v, f"output.formats[{i}]") for i, v in enumerate(raw))
        for fmt in formats:
            if fmt not in ("csv", "json"):
                raise ConfigError(f"output.formats: unknown format {fmt!r} (use csv or json)")
        if not formats:
            raise ConfigError("output.formats: must be nonempty")
        kwargs["formats"] = formats
    _reject_unknown(data, "output")
    return OutputBlock(**kwargs)


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def parse_config(data: Any) -> ExperimentConfig:
    """Validate a loaded YAML document into an :class:`ExperimentConfig`."""
    top = _require_mapping(data, "config")
    path = None
    path_spec = None
    if "path" in top:
        path, path_spec = _parse_path(top.pop("path"))
    geometry = _parse_geometry(top.pop("geometry")) if "geometry" in top else GeometryBlock()
    scheduler = _parse_scheduler(top.pop("scheduler")) if "scheduler" in top else None
    agent = _parse_agent(top.pop("agent")) if "agent" in top else None
    stability = _parse_stability(top.pop("stability")) if "stability" in top else StabilityBlock()
    output = _parse_output(top.pop("output")) if "output" in top else OutputBlock()
    _reject_unknown(top, "config")
    return ExperimentConfig(
        path=path,
        path_spec=path_spec,
        geometry=geometry,
        scheduler=scheduler,
        agent=agent,
        stability=stability,
        output=output,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a YAML config file and parse it strictly."""
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {config_path}: {exc}") from exc
    if data is None:
        raise ConfigError(f"config file {config_path} is empty")
    return parse_config(data)
