import dataclasses
import importlib.util
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    List,
    Mapping,
    Optional,
    Tuple,
    Union,
    get_args,
    get_origin,
    get_type_hints,
)

from dotenv import load_dotenv

_ORIGINAL_ENV = os.environ.copy()
_SKIP_DOTENV = os.getenv("SETTINGS_SKIP_DOTENV") == "1"
if not _SKIP_DOTENV:
    load_dotenv()


_YAML_MODULE = None
_yaml_spec = importlib.util.find_spec("yaml")
if _yaml_spec and _yaml_spec.loader:
    _YAML_MODULE = importlib.util.module_from_spec(_yaml_spec)
    _yaml_spec.loader.exec_module(_YAML_MODULE)

ENV_PREFIX = "PCIC_"
SPLITS = ("train", "val", "test")
ABLATIONS = (
    "full",
    "no_pip",
    "no_fg",
    "no_ff",
    "encoder_only",
    "decoder_only",
    "zeros_input",
    "baseline",
    "baseline_pa",
)
DEFAULT_LAMBDAS = (0.004, 0.008, 0.016, 0.032)


class ConfigError(ValueError):
    """Raised when a pipeline configuration is invalid; the message names the field."""


def _normalise(value: Optional[str]) -> Optional[str]:
    if value is None or value == "":
        return None
    return value


def _get_env_var(name: str, *, aliases: Tuple[str, ...] = ()) -> Optional[str]:
    """Return an environment variable using the conventional uppercase name.

    Aliases defined in the pre-dotenv environment win over a primary key that
    only ``.env`` supplies.
    """

    if aliases:
        primary_original = _normalise(_ORIGINAL_ENV.get(name))
        for alias in aliases:
            alias_original = _normalise(_ORIGINAL_ENV.get(alias))
            if alias_original is not None and primary_original is None:
                alias_value = _normalise(os.getenv(alias))
                if alias_value is not None:
                    return alias_value

    value = _normalise(os.getenv(name))
    if value is not None:
        return value

    for alias in aliases:
        alias_value = _normalise(os.getenv(alias))
        if alias_value is not None:
            return alias_value

    return None


def _get_int_env(name: str, default: Optional[int]) -> Optional[int]:
    """Fetch an integer environment variable with fallback to a default value."""

    raw_value = _get_env_var(name)
    if raw_value is None:
        return default

    try:
        return int(raw_value)
    except ValueError as exc:
        raise ConfigError(f"Environment variable {name} must be an integer.") from exc


def _get_bool_env(name: str, default: bool) -> bool:
    """Return a boolean value derived from an environment variable."""

    raw_value = _get_env_var(name)
    if raw_value is None:
        return default

    normalised = raw_value.strip().lower()
    if normalised in {"1", "true", "yes", "on"}:
        return True
    if normalised in {"0", "false", "no", "off"}:
        return False
    raise ConfigError(
        f"Environment variable {name} must be a boolean (accepted values: 1/0, true/false)."
    )


def _get_path_env(name: str, default: Optional[Path]) -> Optional[Path]:
    """Return the path from an environment variable or a default."""

    raw_value = _get_env_var(name)
    if raw_value:
        return Path(raw_value).expanduser().resolve()
    return default


def _parse_scalar(text: str) -> Any:
    """Interpret an env string the way the config file would (``500``, ``[1, 2]``, ``true``)."""

    if _YAML_MODULE is not None:
        try:
            return _YAML_MODULE.safe_load(text)
        except Exception:
            return text
    try:
        return json.loads(text)
    except ValueError:
        return text


def _prefixed_env_mapping(prefix: str, cast: Callable[[str], Any]) -> Dict[str, Any]:
    """Extract a mapping of values from environment variables using a prefix."""

    result: Dict[str, Any] = {}
    for key, value in os.environ.items():
        if not key.startswith(prefix):
            continue
        suffix = key[len(prefix) :].strip()
        if not suffix:
            continue
        try:
            result[suffix.lower()] = cast(value)
        except (TypeError, ValueError):
            raise ConfigError(
                f"Environment variable {key} must be coercible to {cast.__name__}."
            )
    return result


def _read_config_file(path: Path) -> Mapping[str, Any]:
    """Load a pipeline configuration document from a JSON or YAML file."""

    suffix = path.suffix.lower()
    text = path.read_text(encoding="utf-8")

    if suffix in {".yaml", ".yml"}:
        if _YAML_MODULE is None:
            raise RuntimeError("PyYAML is required to load YAML configuration files.")
        data = _YAML_MODULE.safe_load(text) or {}
    elif suffix == ".json":
        data = json.loads(text)
    else:
        raise ConfigError(
            f"Unsupported configuration format '{suffix}'. Use JSON or YAML."
        )

    if not isinstance(data, Mapping):
        raise ConfigError("Configuration file must contain a mapping at the top level.")

    return data


# ----------------------------------------------------------------------
# Pipeline sections
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class DatasetConfig:
    root: Optional[str] = None
    split_spec: Dict[str, str] = field(default_factory=dict)
    camera_index: int = 2
    roi_height: int = 256

    def validate(self) -> None:
        if self.camera_index not in (0, 1, 2, 3):
            raise ConfigError("dataset.camera_index: must be one of 0, 1, 2, 3")
        if self.roi_height <= 0:
            raise ConfigError("dataset.roi_height: must be > 0")
        for scene, split in self.split_spec.items():
            if split not in SPLITS:
                raise ConfigError(
                    f"dataset.split_spec.{scene}: '{split}' is not one of {', '.join(SPLITS)}"
                )


@dataclass(frozen=True)
class ProjectionConfig:
    """Depth scaling (bins per metre) and output raster size of a projection."""

    s: float = 3.0
    width: int = 1242
    height: int = 375

    def validate(self) -> None:
        if self.s <= 0:
            raise ConfigError("projection.s: must be > 0")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("projection.width/height: must be > 0")


@dataclass(frozen=True)
class ContextNetConfig:
    c_channels: int = 32
    c_hyper_channels: int = 64
    pip_width: int = 64

    def validate(self) -> None:
        for name in ("c_channels", "c_hyper_channels", "pip_width"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"context.{name}: must be > 0")


@dataclass(frozen=True)
class CodecConfig:
    n_channels: int = 192
    m_channels: int = 128
    lambda_index: int = 0
    conditional: bool = True
    injection_sides: str = "both"
    pa_width_factor: float = 1.5

    def validate(self) -> None:
        if self.n_channels <= 0 or self.m_channels <= 0:
            raise ConfigError("codec.n_channels/m_channels: must be > 0")
        if not 0 <= self.lambda_index <= 255:
            raise ConfigError("codec.lambda_index: must fit in one byte")
        if self.injection_sides not in ("encoder", "decoder", "both"):
            raise ConfigError(
                "codec.injection_sides: must be one of encoder, decoder, both"
            )
        if self.pa_width_factor < 1.0:
            raise ConfigError("codec.pa_width_factor: must be >= 1.0")


@dataclass(frozen=True)
class TrainConfig:
    lambda_: float = 0.016
    total_steps: int = 1000
    alpha_schedule: Optional[List[Tuple[int, float]]] = None
    batch_size: int = 8
    patch: int = 256
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0
    ablation: str = "full"
    lambdas: List[float] = field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    checkpoint_every: int = 100
    grad_clip: float = 1.0
    aux_learning_rate: float = 1e-3
    pre_loss_scope: str = "pip"
    frame_cache_size: int = 256

    def validate(self) -> None:
        if self.lambda_ <= 0:
            raise ConfigError("train.lambda: must be > 0")
        if any(value <= 0 for value in self.lambdas) or not self.lambdas:
            raise ConfigError("train.lambdas: must be a non-empty list of values > 0")
        if self.total_steps <= 0:
            raise ConfigError("train.total_steps: must be > 0")
        if self.batch_size <= 0:
            raise ConfigError("train.batch_size: must be > 0")
        if self.patch <= 0 or self.patch % 64:
            raise ConfigError("train.patch: must be a positive multiple of 64")
        if self.learning_rate <= 0 or self.aux_learning_rate <= 0:
            raise ConfigError("train.learning_rate: must be > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("train.adam_beta1/adam_beta2: must lie in [0, 1)")
        if self.ablation not in ABLATIONS:
            raise ConfigError(
                f"train.ablation: '{self.ablation}' is not one of {', '.join(ABLATIONS)}"
            )
        if self.checkpoint_every <= 0:
            raise ConfigError("train.checkpoint_every: must be > 0")
        if self.grad_clip <= 0:
            raise ConfigError("train.grad_clip: must be > 0")
        if self.frame_cache_size < 0:
            raise ConfigError("train.frame_cache_size: must be >= 0")
        if self.pre_loss_scope not in ("pip", "joint"):
            raise ConfigError("train.pre_loss_scope: must be 'pip' or 'joint'")
        if self.alpha_schedule is not None:
            thresholds = [threshold for threshold, _ in self.alpha_schedule]
            if not thresholds:
                raise ConfigError("train.alpha_schedule: must not be empty")
            if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
                raise ConfigError(
                    "train.alpha_schedule: thresholds must be strictly increasing"
                )
            if thresholds[0] != 0:
                raise ConfigError("train.alpha_schedule: first threshold must be 0")
            if any(alpha < 0 for _, alpha in self.alpha_schedule):
                raise ConfigError("train.alpha_schedule: alpha values must be >= 0")


@dataclass(frozen=True)
class EvaluationConfig:
    zeros: bool = False
    degrade_voxel: Optional[float] = None
    anchor: str = "baseline"
    baselines: Dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if self.degrade_voxel is not None and self.degrade_voxel <= 0:
            raise ConfigError("evaluation.degrade_voxel: must be > 0")


@dataclass(frozen=True)
class OutputConfig:
    root: str = "runs"

    def validate(self) -> None:
        if not self.root:
            raise ConfigError("output.root: must not be empty")

    @property
    def root_path(self) -> Path:
        return Path(self.root)

    @property
    def checkpoint_dir(self) -> Path:
        return self.root_path / "checkpoints"

    @property
    def depth_dir(self) -> Path:
        return self.root_path / "depth"

    @property
    def metrics_dir(self) -> Path:
        return self.root_path / "metrics"

    @property
    def records_dir(self) -> Path:
        return self.root_path / "records"

    @property
    def report_dir(self) -> Path:
        return self.root_path / "reports"

    @property
    def manifest_dir(self) -> Path:
        return self.root_path / "manifests"


@dataclass(frozen=True)
class GlobalConfig:
    seed: int = 0
    device: str = "cpu"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    context: ContextNetConfig = field(default_factory=ContextNetConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> None:
        if self.device not in ("cpu", "cuda") and not self.device.startswith("cuda:"):
            raise ConfigError("device: must be 'cpu' or a cuda device")
        for section in _SECTIONS:
            getattr(self, section).validate()


_SECTIONS: Dict[str, type] = {
    "dataset": DatasetConfig,
    "projection": ProjectionConfig,
    "context": ContextNetConfig,
    "codec": CodecConfig,
    "train": TrainConfig,
    "evaluation": EvaluationConfig,
    "output": OutputConfig,
}
# Keys that are Python keywords are spelled without the trailing underscore on disk.
_FIELD_ALIASES = {"lambda": "lambda_"}


def _coerce(value: Any, hint: Any, dotted: str) -> Any:
    origin = get_origin(hint)
    args = get_args(hint)

    if hint is Any:
        return value
    if origin is Union:
        if value is None and type(None) in args:
            return None
        candidates = [arg for arg in args if arg is not type(None)]
        errors: List[str] = []
        for candidate in candidates:
            try:
                return _coerce(value, candidate, dotted)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[0] if errors else f"{dotted}: invalid value")
    if hint is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{dotted}: expected a boolean, got {value!r}")
    if hint is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{dotted}: expected an integer, got {value!r}")
    if hint is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{dotted}: expected a number, got {value!r}")
    if hint is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"{dotted}: expected a string, got {value!r}")
    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{dotted}: expected a list, got {value!r}")
        return [
            _coerce(item, args[0] if args else Any, f"{dotted}[{index}]")
            for index, item in enumerate(value)
        ]
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigError(f"{dotted}: expected {len(args)} values, got {value!r}")
        return tuple(
            _coerce(item, arg, f"{dotted}[{index}]")
            for index, (item, arg) in enumerate(zip(value, args))
        )
    if origin in (dict, Dict):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{dotted}: expected a mapping, got {value!r}")
        key_hint, value_hint = args if args else (Any, Any)
        return {
            _coerce(key, key_hint, dotted): _coerce(item, value_hint, f"{dotted}.{key}")
            for key, item in value.items()
        }
    raise ConfigError(f"{dotted}: unsupported field type {hint!r}")


def _build_section(cls: type, data: Any, section: str) -> Any:
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{section}: expected a mapping")
    hints = get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs: Dict[str, Any] = {}
    for raw_key, value in data.items():
        key = _FIELD_ALIASES.get(str(raw_key), str(raw_key))
        if key not in known:
            raise ConfigError(f"{section}.{raw_key}: unknown key")
        kwargs[key] = _coerce(value, hints[key], f"{section}.{raw_key}")
    return cls(**kwargs)


def _set_dotted(target: Dict[str, Any], dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = target
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = {}
            node[part] = child
        if not isinstance(child, dict):
            raise ConfigError(f"{dotted}: cannot override a non-mapping value")
        node = child
    node[parts[-1]] = value


def _deep_copy(data: Mapping[str, Any]) -> Dict[str, Any]:
    return json.loads(json.dumps(data))


def _section_env_overrides() -> Dict[str, Any]:
    """``PCIC_TRAIN__TOTAL_STEPS=500`` style overrides, keyed ``train.total_steps``."""

    overrides: Dict[str, Any] = {}
    for key, value in _prefixed_env_mapping(ENV_PREFIX, str).items():
        if "__" not in key:
            continue
        overrides[key.replace("__", ".")] = _parse_scalar(value)
    return overrides


class Settings:
    """Process settings loaded from environment variables or defaults."""

    def __init__(self) -> None:
        project_root = Path(__file__).resolve().parents[1]
        self.project_root: Path = project_root
        self.config_file: Optional[Path] = _get_path_env("PCIC_CONFIG_FILE", None)
        self.seed: Optional[int] = _get_int_env("PCIC_SEED", None)
        self.output_dir: Optional[Path] = _get_path_env("PCIC_OUTPUT_DIR", None)
        self.device: str = (_get_env_var("PCIC_DEVICE") or "cpu").strip().lower()
        self.log_level: str = (_get_env_var("PCIC_LOG_LEVEL") or "INFO").strip().upper()
        self.metrics_log_enabled: bool = _get_bool_env("PCIC_METRICS_LOG_ENABLED", True)
        self.otel_enabled: bool = _get_bool_env("PCIC_OTEL_ENABLED", False)
        self.otel_service_name: str = (
            _get_env_var("PCIC_OTEL_SERVICE_NAME") or "pcic"
        ).strip()


def load_global_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    *,
    settings_obj: Optional[Settings] = None,
) -> GlobalConfig:
    """Build and validate the whole pipeline configuration.

    Precedence, lowest first: file, ``PCIC_`` environment, explicit ``overrides``
    (dotted keys such as ``train.ablation``, as produced by the CLI flags).
    """

    active = settings_obj or Settings()
    config_path = Path(path) if path is not None else active.config_file
    data: Dict[str, Any] = {}
    if config_path is not None:
        data = _deep_copy(_read_config_file(Path(config_path)))

    if active.seed is not None:
        data["seed"] = active.seed
    if active.output_dir is not None:
        _set_dotted(data, "output.root", str(active.output_dir))
    if _get_env_var("PCIC_DEVICE"):
        data["device"] = active.device
    for dotted, value in _section_env_overrides().items():
        _set_dotted(data, dotted, value)
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, dotted, value)

    return global_config_from_dict(data)


def global_config_from_dict(data: Mapping[str, Any]) -> GlobalConfig:
    """Validate a configuration mapping (file contents or a checkpoint's copy)."""

    unknown = set(data) - set(_SECTIONS) - {"seed", "device"}
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")

    sections = {
        name: _build_section(cls, data.get(name), name)
        for name, cls in _SECTIONS.items()
    }
    # A top-level seed funnels into every consumer; otherwise train.seed is the seed.
    if "seed" in data:
        seed = _coerce(data["seed"], int, "seed")
        sections["train"] = dataclasses.replace(sections["train"], seed=seed)
    else:
        seed = sections["train"].seed
    device = _coerce(data.get("device", "cpu"), str, "device")

    config = GlobalConfig(seed=seed, device=device, **sections)
    config.validate()
    return config


def config_to_dict(config: GlobalConfig) -> Dict[str, Any]:
    """JSON-ready mapping that :func:`global_config_from_dict` accepts."""

    data = dataclasses.asdict(config)
    train = data["train"]
    train["lambda"] = train.pop("lambda_")
    if train["alpha_schedule"] is not None:
        train["alpha_schedule"] = [list(item) for item in train["alpha_schedule"]]
    return data


# Notes: Singleton instance for importing settings in other modules
settings = Settings()
