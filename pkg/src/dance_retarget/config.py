"""
Pipeline configuration.

Values are resolved in increasing precedence: dataclass defaults, ``.env``
(``DANCE_OUTPUT_DIR``, ``DANCE_SEED``, ``DANCE_LOG_LEVEL``), the TOML file,
then command-line overrides.
"""

import dataclasses
import hashlib
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
from dotenv import dotenv_values

from dance_retarget.demo import DemoParams
from dance_retarget.errors import ConfigError, FormatError
from dance_retarget.execution import Disturbance, ExecutionConfig, parse_disturbance
from dance_retarget.ocp import OcpSettings
from dance_retarget.retarget import RetargetConfig
from dance_retarget.simulator import SimWorld

logger = logging.getLogger(__name__)

env = dotenv_values(".env")

HORIZON_RANGE = (0.2, 2.0)
DEFAULT_OUTPUT_DIR = "out"


@dataclass(frozen=True)
class PathsConfig:
    """
    Attributes:
        model: Robot model JSON; the built-in K18 humanoid when unset
        clip: Demonstrator clip JSON; generated from ``[demo]`` when unset
        schedule: Contact schedule JSON; the generator's or auto-annotated when unset
        skeleton_map: Skeleton map JSON; the generator's skeleton when unset
    """

    model: Optional[str] = None
    clip: Optional[str] = None
    schedule: Optional[str] = None
    skeleton_map: Optional[str] = None
    output_dir: str = field(default=DEFAULT_OUTPUT_DIR, compare=False)


@dataclass(frozen=True)
class OptimizeConfig:
    horizon: float = 1.2
    window_stride: int = 1
    max_iterations: Optional[int] = None
    settings: OcpSettings = OcpSettings()


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = PathsConfig()
    demo: DemoParams = DemoParams()
    retarget: RetargetConfig = RetargetConfig()
    optimize: OptimizeConfig = OptimizeConfig()
    world: SimWorld = SimWorld()
    execution: ExecutionConfig = ExecutionConfig()
    disturbances: Tuple[str, ...] = ()
    seed: int = 0
    simulate: bool = True
    source: Optional[str] = field(default=None, compare=False)

    @property
    def horizon(self) -> float:
        return self.optimize.horizon

    @property
    def output_dir(self) -> Path:
        return Path(self.paths.output_dir)

    def pushes(self) -> List[Disturbance]:
        return [parse_disturbance(text) for text in self.disturbances]

    def execution_config(self) -> ExecutionConfig:
        """The execution settings with the pipeline's horizon, OCP settings and seed."""
        return dataclasses.replace(
            self.execution, horizon=self.optimize.horizon, ocp=self.optimize.settings, seed=self.seed
        )

    def validate(self) -> None:
        """
        Raises:
            ConfigError: If a referenced file is missing or a value is out of range
        """
        for name in ("model", "clip", "schedule", "skeleton_map"):
            value = getattr(self.paths, name)
            if value is not None and not Path(value).is_file():
                raise ConfigError(f"{name} file '{value}' does not exist")
        low, high = HORIZON_RANGE
        if not low <= self.optimize.horizon <= high:
            raise ConfigError(f"horizon must lie in [{low}, {high}] s, got {self.optimize.horizon}")
        if self.optimize.window_stride < 1:
            raise ConfigError("window_stride must be at least 1")
        if self.paths.clip is None:
            self.demo.validate()
        self.retarget.validate()
        self.optimize.settings.validate()
        self.world.validate()
        self.execution_config().validate()
        self.pushes()

    def with_overrides(self, **overrides) -> "PipelineConfig":
        """
        Apply dotted overrides such as ``{"optimize.horizon": 0.8, "seed": 3}``.
        ``None`` values are ignored.
        """
        config = self
        for key, value in overrides.items():
            if value is not None:
                config = _replace_path(config, key.split("."), value)
        return config


def _replace_path(node: Any, keys: List[str], value: Any) -> Any:
    name = keys[0]
    if not dataclasses.is_dataclass(node) or name not in {f.name for f in dataclasses.fields(node)}:
        raise ConfigError(f"unknown configuration key '{name}'")
    if len(keys) == 1:
        return dataclasses.replace(node, **{name: value})
    return dataclasses.replace(node, **{name: _replace_path(getattr(node, name), keys[1:], value)})


def _build(base: Any, table: Mapping[str, Any], where: str):
    """Overlay a TOML table on a (possibly nested) config dataclass."""
    if not isinstance(table, Mapping):
        raise ConfigError(f"[{where}] must be a table")
    fields = {f.name for f in dataclasses.fields(base)}
    values = {}
    for key, value in table.items():
        if key not in fields:
            raise ConfigError(f"unknown key '{key}' in [{where}]")
        current = getattr(base, key)
        if dataclasses.is_dataclass(current):
            values[key] = _build(current, value, f"{where}.{key}")
        elif isinstance(current, np.ndarray):
            values[key] = np.asarray(value, dtype=float)
        elif isinstance(current, tuple):
            values[key] = tuple(value)
        else:
            values[key] = value
    try:
        return dataclasses.replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{where}]: {exc}") from exc


_SECTIONS = ("paths", "demo", "retarget", "optimize", "world", "execution")


def env_defaults(values: Optional[Mapping[str, Optional[str]]] = None) -> Dict[str, Any]:
    """Dotted overrides taken from ``.env``."""
    values = env if values is None else values
    overrides: Dict[str, Any] = {}
    if values.get("DANCE_OUTPUT_DIR"):
        overrides["paths.output_dir"] = values["DANCE_OUTPUT_DIR"]
    if values.get("DANCE_SEED"):
        try:
            overrides["seed"] = int(values["DANCE_SEED"])
        except ValueError as exc:
            raise ConfigError(f"DANCE_SEED must be an integer, got '{values['DANCE_SEED']}'") from exc
    return overrides


def config_from_dict(document: Mapping[str, Any], source: Optional[str] = None) -> PipelineConfig:
    config = PipelineConfig(source=source).with_overrides(**env_defaults())
    values: Dict[str, Any] = {}
    for key, value in document.items():
        if key in _SECTIONS:
            values[key] = _build(getattr(config, key), value, key)
        elif key == "disturbances":
            values[key] = tuple(str(item) for item in value)
        elif key in ("seed", "simulate"):
            values[key] = value
        else:
            raise ConfigError(f"unknown top-level key '{key}'")
    config = dataclasses.replace(config, **values)
    if source is not None:
        config = _resolve_paths(config, Path(source).parent)
    return config


def _resolve_paths(config: PipelineConfig, base: Path) -> PipelineConfig:
    """Make input paths relative to the config file's directory."""
    resolved = {}
    for name in ("model", "clip", "schedule", "skeleton_map"):
        value = getattr(config.paths, name)
        if value is not None and not Path(value).is_absolute():
            resolved[name] = str(base / value)
    return dataclasses.replace(config, paths=dataclasses.replace(config.paths, **resolved))


def load_config(path: Optional[str] = None) -> PipelineConfig:
    """
    Read a pipeline TOML document. Without a path the defaults plus ``.env`` are used.

    Raises:
        FormatError: If the file cannot be read or is not valid TOML
        ConfigError: If it contains unknown keys or invalid values
    """
    if path is None:
        return PipelineConfig().with_overrides(**env_defaults())
    try:
        with open(path, "rb") as handle:
            document = tomllib.load(handle)
    except OSError as exc:
        raise FormatError(str(path), f"cannot read file ({exc.strerror})") from exc
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(str(path), str(exc)) from exc
    logger.debug("loaded configuration from %s", path)
    return config_from_dict(document, source=str(path))


def _canonical(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _canonical(getattr(value, f.name)) for f in dataclasses.fields(value) if f.compare}
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_canonical(item) for item in value]
    if isinstance(value, dict):
        return {str(key): _canonical(item) for key, item in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


def config_hash(config: PipelineConfig) -> str:
    """SHA-256 of the canonical JSON of the resolved configuration."""
    text = json.dumps(_canonical(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def log_level(cli_value: Optional[str] = None) -> str:
    return (cli_value or env.get("DANCE_LOG_LEVEL") or "INFO").upper()

