import json
import os
from pathlib import Path
from typing import Any, Literal, Sequence, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

ModelT = TypeVar("ModelT", bound=BaseModel)

class MotionConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    std_weight_position: float = Field(default=1.0 / 20, gt=0)
    std_weight_velocity: float = Field(default=1.0 / 160, gt=0)
    smoothing: float = Field(default=0.2, ge=0)
    # Chi-square 0.95 quantile with 4 degrees of freedom.
    gate_threshold: float = Field(default=9.4877, gt=0)
    min_noise_scale: float = Field(default=1e-12, gt=0, le=1)

class TrackerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    high_score: float = Field(default=0.6, ge=0, le=1)
    low_score: float = Field(default=0.1, ge=0, le=1)
    appearance_reject: float = Field(default=0.45, ge=0, le=2)
    max_lost: int = Field(default=30, ge=0)
    ema_momentum: float = Field(default=0.9, gt=0, lt=1)
    appearance_weight: float = Field(default=0.75, ge=0, le=1)
    relink_threshold: float = Field(default=0.4, ge=0, le=2)
    stationary_window: int = Field(default=10, ge=2)
    stationary_eps: float = Field(default=0.1, ge=0)
    border_margin: float = Field(default=0.05, ge=0, lt=0.5)
    relink_max_gap: int = Field(default=60, ge=1)
    relink_spatial_factor: float = Field(default=3.0, gt=0)
    relink_feature_window: int = Field(default=10, ge=1)
    bt_iou: float = Field(default=0.7, gt=0, le=1)
    use_ssa: bool = True
    use_trl: bool = True
    use_bt: bool = True
    motion: MotionConfig = Field(default_factory=MotionConfig)

    @model_validator(mode="after")
    def _check_scores(self):
        if not self.low_score < self.high_score:
            raise ValueError(
                f"low_score ({self.low_score}) must be below high_score ({self.high_score})"
            )

        return self

class IcaConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k_mean: int = Field(default=5, ge=1)
    alpha_penalty: float = Field(default=2.0, ge=1)
    alpha_t: float = Field(default=1.0, ge=0)
    beta_t: float | None = Field(default=None, gt=0)
    alpha_o: float = Field(default=1.1, ge=0)
    r_thre: float = Field(default=0.6, ge=0, le=1)
    k_reciprocal: int = Field(default=7, ge=1)
    rerank_k1: int = Field(default=20, ge=1)
    rerank_k2: int = Field(default=6, ge=1)
    rerank_lambda: float = Field(default=0.3, ge=0, le=1)
    min_votes: int = Field(default=3, ge=1)
    match_threshold: float = Field(default=0.5, gt=0)
    matrix: Literal["tracklet", "box"] = "box"
    method: Literal["hungarian", "reciprocal"] = "reciprocal"
    use_rerank: bool = True
    use_time_window: bool = True
    use_occlusion: bool = True
    include_singletons: bool = False

class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    tracker: TrackerConfig = Field(default_factory=TrackerConfig)
    ica: IcaConfig = Field(default_factory=IcaConfig)
    topology: Path
    detections: Path
    output: Path
    ground_truth: Path | None = None
    jobs: int = Field(default=1, ge=1)
    iou_min: float = Field(default=0.5, gt=0, lt=1)

    @field_validator("topology")
    @classmethod
    def _topology_exists(cls, path: Path):
        if not path.is_file():
            raise ValueError(f"topology file '{path}' does not exist")

        return path

    @field_validator("detections", "ground_truth")
    @classmethod
    def _folder_exists(cls, path: Path | None):
        if path is not None and not path.is_dir():
            raise ValueError(f"folder '{path}' does not exist")

        return path

def _try_cast(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value

def apply_overrides(settings: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """
    Apply `section.key=value` overrides to a settings dictionary.
    Values are read as JSON when possible and as plain strings otherwise.
    """
    for override in overrides:
        key, sep, value = override.partition("=")
        if not sep or not key:
            raise ConfigError(f"Invalid override '{override}', expected key=value")

        container = settings
        *parents, leaf = key.split(".")
        for parent in parents:
            container = container.setdefault(parent, {})
            if not isinstance(container, dict):
                raise ConfigError(f"Override '{key}' does not address a config section")

        container[leaf] = _try_cast(value)

    return settings

def read_settings(path: str | os.PathLike | None, overrides: Sequence[str] = ()) -> dict[str, Any]:
    settings = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fp:
                settings = json.load(fp)
        except FileNotFoundError:
            raise ConfigError(f"Config file '{path}' does not exist")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config file '{path}' is not valid JSON: {exc}")

        if not isinstance(settings, dict):
            raise ConfigError(f"Config file '{path}' must hold a JSON object")

    return apply_overrides(settings, overrides)

def build_model(model_cls: type[ModelT], data: Any, name: str | None = None) -> ModelT:
    try:
        return model_cls.model_validate(data if data is not None else {})
    except ValidationError as exc:
        label = name or model_cls.__name__
        raise ConfigError(f"Invalid {label}: {exc}")

def load_run_config(path: str | os.PathLike, overrides: Sequence[str] = ()) -> RunConfig:
    settings = read_settings(path, overrides)

    # Relative paths are taken relative to the config file.
    base = Path(path).resolve().parent
    for key in ("topology", "detections", "output", "ground_truth"):
        value = settings.get(key)
        if isinstance(value, str) and not os.path.isabs(value):
            settings[key] = str(base / value)

    return build_model(RunConfig, settings, "run config")
