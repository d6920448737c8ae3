"""Run configuration: one flat JSON file covering data generation,
model sizes, selection, loss, training, and evaluation.

Unknown keys are rejected so typos fail loudly. ``n_minus`` accepts the
string "all", resolved against the training-set size at run time as
N - n_plus - 1. Defaults follow the method's published hyperparameter
choices (lambda_c=0.005, beta=0.5, lambda_t=0.5, alpha=1.75, n_plus=7,
n_minus=500, lambda_p=0.5, learning rate 1e-3, momentum 0.9, batch 8,
50 epochs).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ConfigError, DataFormatError
from .losses import LossConfig
from .model import ModelDims
from .sampling import SimilarityConfig
from .synthdata import DatasetSpec
from .trainer import TrainConfig


@dataclass
class RunConfig:
    # dataset generation
    num_identities: int = 50
    num_cameras: int = 6
    images_per_identity_camera: int = 4
    image_height: int = 32
    image_width: int = 16
    image_channels: int = 3
    identity_bands: int = 8
    identity_band_scale: float = 0.45
    identity_global_scale: float = 0.08
    camera_tint_scale: float = 0.02
    noise_scale: float = 0.09
    min_prototype_angle_deg: float = 40.0
    eval_holdout_per_identity_camera: int = 2
    # model sizes
    encoder_hidden: int = 128
    encoder_channels: int = 64
    feature_height: int = 8
    feature_width: int = 4
    num_stripes: int = 8
    key_dim: int = 64
    share_global_stripe_projection: bool = False
    # selection
    beta: float = 0.5
    lambda_c: float = 0.005
    n_plus: int = 7
    n_minus: int | str = 500  # int or "all"
    # loss
    tau: float = 0.05
    lambda_t: float = 0.5
    alpha: float = 1.75
    lambda_p: float = 0.5
    # training
    epochs: int = 50
    init_epochs: int = 5
    batch_size: int = 8
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    flip_probability: float = 0.5
    mixture_features: str = "both"
    # evaluation
    eval_exclude_same_camera: bool = True
    eval_append_local: bool = False
    # optional default paths, overridable by CLI flags
    dataset_path: str | None = None
    checkpoint_path: str | None = None
    metrics_path: str | None = None
    report_path: str | None = None

    # -- derived views ----------------------------------------------------

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            num_identities=self.num_identities,
            num_cameras=self.num_cameras,
            images_per_identity_camera=self.images_per_identity_camera,
            image_height=self.image_height,
            image_width=self.image_width,
            image_channels=self.image_channels,
            identity_bands=self.identity_bands,
            identity_band_scale=self.identity_band_scale,
            identity_global_scale=self.identity_global_scale,
            camera_tint_scale=self.camera_tint_scale,
            noise_scale=self.noise_scale,
            min_prototype_angle_deg=self.min_prototype_angle_deg,
            eval_holdout_per_identity_camera=self.eval_holdout_per_identity_camera,
            seed=self.seed,
        )

    def model_dims(self) -> ModelDims:
        return ModelDims(
            image_height=self.image_height,
            image_width=self.image_width,
            image_channels=self.image_channels,
            encoder_hidden=self.encoder_hidden,
            channels=self.encoder_channels,
            feature_height=self.feature_height,
            feature_width=self.feature_width,
            num_stripes=self.num_stripes,
            key_dim=self.key_dim,
        )

    def resolved_n_minus(self, num_train: int) -> int:
        if self.n_minus == "all":
            return num_train - self.n_plus - 1
        return int(self.n_minus)

    def train_config(self, num_train: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            init_epochs=self.init_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            seed=self.seed,
            flip_probability=self.flip_probability,
            mixture_features=self.mixture_features,
            share_stripe_projection=self.share_global_stripe_projection,
            similarity=SimilarityConfig(
                beta=self.beta,
                lambda_c=self.lambda_c,
                n_plus=self.n_plus,
                n_minus=self.resolved_n_minus(num_train),
            ),
            loss=LossConfig(
                tau=self.tau,
                lambda_t=self.lambda_t,
                alpha=self.alpha,
                lambda_p=self.lambda_p,
            ),
        )

    # -- validation and serialization --------------------------------------

    def validate(self):
        if self.n_minus != "all":
            if not isinstance(self.n_minus, int) or isinstance(self.n_minus, bool):
                raise ConfigError(f'n_minus must be an integer or "all", got {self.n_minus!r}')
            if self.n_minus < 1:
                raise ConfigError(f"n_minus must be >= 1, got {self.n_minus}")
        if self.n_plus < 1:
            raise ConfigError(f"n_plus must be >= 1, got {self.n_plus}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.lambda_c < 0.0:
            raise ConfigError(f"lambda_c must be >= 0, got {self.lambda_c}")
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.lambda_t <= 1.0:
            raise ConfigError(f"lambda_t must lie in [0, 1], got {self.lambda_t}")
        if self.alpha <= 0.0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.lambda_p <= 1.0:
            raise ConfigError(f"lambda_p must lie in [0, 1], got {self.lambda_p}")
        if self.init_epochs >= self.epochs:
            raise ConfigError(
                f"init_epochs ({self.init_epochs}) must be smaller than epochs ({self.epochs})"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.mixture_features not in ("both", "global", "local"):
            raise ConfigError(
                f"mixture_features must be both/global/local, got {self.mixture_features!r}"
            )
        try:
            self.model_dims().validate()
            self.dataset_spec().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.image_height % self.num_stripes != 0:
            raise ConfigError(
                f"image height {self.image_height} must split evenly into {self.num_stripes} stripes"
            )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}

_INT_KEYS = {
    "num_identities", "num_cameras", "images_per_identity_camera", "image_height",
    "image_width", "image_channels", "identity_bands", "eval_holdout_per_identity_camera",
    "encoder_hidden", "encoder_channels", "feature_height", "feature_width", "num_stripes",
    "key_dim", "n_plus", "epochs", "init_epochs", "batch_size", "seed",
}
_FLOAT_KEYS = {
    "identity_band_scale", "identity_global_scale", "camera_tint_scale", "noise_scale",
    "min_prototype_angle_deg", "beta", "lambda_c", "tau", "lambda_t", "alpha", "lambda_p",
    "learning_rate", "momentum", "flip_probability",
}
_BOOL_KEYS = {"share_global_stripe_projection", "eval_exclude_same_camera", "eval_append_local"}
_STR_KEYS = {"mixture_features"}
_PATH_KEYS = {"dataset_path", "checkpoint_path", "metrics_path", "report_path"}


def _coerce(key: str, value):
    if key == "n_minus":
        if value == "all":
            return "all"
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f'n_minus must be an integer or "all", got {value!r}')
        return value
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    if key in _PATH_KEYS:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key} must be a path string or null, got {value!r}")
        return value
    raise ConfigError(f"unknown configuration key {key!r}")


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a JSON object")
    unknown = sorted(set(raw) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    values = {key: _coerce(key, value) for key, value in raw.items()}
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def load_config(path: str | None) -> RunConfig:
    """Config from a JSON file; defaults when no path is given."""
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(raw)
