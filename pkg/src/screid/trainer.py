"""Training loop: warm-up epochs, selective contrastive epochs, SGD.

Each epoch shuffles the training set (seeded per epoch), walks it in
batches, computes keys for the whole batch in one forward pass, builds a
per-sample loss, sums over the batch, backpropagates, steps, and only
then folds the batch's detached keys into the memory banks in sample
order. The first ``init_epochs`` epochs use the warm-up loss with the
anchor as its own positive and random negatives; later epochs run the
ranked selection. All randomness is derived from (seed, epoch, purpose)
so resuming from a checkpoint at an epoch boundary is bit-identical to
an uninterrupted run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .losses import LossConfig, init_contrastive_loss, selective_contrastive_loss, total_loss
from .memory import MemoryBanks, init_banks
from .model import (
    ModelDims,
    ModelParams,
    ProjectedKeys,
    compute_keys_batch,
    init_model,
)
from .sampling import SimilarityConfig, partition_and_select
from .synthdata import ImageSample, augment_flip

# rng sub-stream tags
_MODEL_STREAM = 11
_SHUFFLE_STREAM = 12
_FLIP_STREAM = 13
_NEGATIVES_STREAM = 14


@dataclass
class TrainConfig:
    epochs: int = 50
    init_epochs: int = 5
    batch_size: int = 8
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    flip_probability: float = 0.5
    mixture_features: str = "both"
    share_stripe_projection: bool = False
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self):
        if self.init_epochs >= self.epochs:
            raise ConfigError(
                f"init_epochs ({self.init_epochs}) must be smaller than epochs ({self.epochs})"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigError(f"flip_probability must lie in [0, 1], got {self.flip_probability}")
        if self.mixture_features not in ("both", "global", "local"):
            raise ConfigError(f"mixture_features must be both/global/local, got {self.mixture_features!r}")
        self.similarity.validate()
        self.loss.validate()


class SGDMomentum:
    """Plain SGD with momentum: velocity <- m*velocity + grad;
    param <- param - lr*velocity."""

    def __init__(self, named_params: dict, learning_rate: float, momentum: float):
        self.named_params = dict(named_params)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in self.named_params.items()}

    def zero_grad(self):
        for t in self.named_params.values():
            t.zero_grad()

    def step(self):
        for name, t in self.named_params.items():
            if t.grad is None:
                raise ValueError(f"parameter {name} has no gradient; call zero_grad before backward")
            v = self.momentum * self.velocity[name] + t.grad
            self.velocity[name] = v
            t.data -= self.learning_rate * v


@dataclass
class EpochRecord:
    epoch: int  # 1-based
    phase: str  # "init" or "train"
    loss_global: float
    loss_local: float
    loss_total: float


@dataclass
class TrainResult:
    params: ModelParams
    banks: MemoryBanks
    optimizer: SGDMomentum
    records: list[EpochRecord]


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, _SHUFFLE_STREAM]).permutation(n)


def _batch_images(
    samples: list[ImageSample], indices: np.ndarray, flip_p: float, rng: np.random.Generator
) -> np.ndarray:
    picked = [augment_flip(samples[int(i)], flip_p, rng) for i in indices]
    return np.stack([s.pixels for s in picked]).astype(np.float64)


def _random_negatives(seed: int, epoch: int, anchor: int, n: int, count: int) -> np.ndarray:
    """Uniform non-anchor indices without replacement, seeded per (epoch, sample)."""
    rng = np.random.default_rng([seed, epoch, _NEGATIVES_STREAM, anchor])
    draw = rng.choice(n - 1, size=count, replace=False)
    return draw + (draw >= anchor)


def _check_finite(value: float, what: str):
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {what}: {value!r}")


def run_init_epoch(
    samples: list[ImageSample],
    params: ModelParams,
    banks: MemoryBanks,
    opt: SGDMomentum,
    cfg: TrainConfig,
    epoch: int,
) -> EpochRecord:
    """Warm-up epoch: anchor-as-positive loss, then anchor bank updates."""
    n = len(samples)
    n_neg = min(cfg.similarity.n_minus, n - 1)
    order = _epoch_order(cfg.seed, epoch, n)
    flip_rng = np.random.default_rng([cfg.seed, epoch, _FLIP_STREAM])
    sum_g = sum_l = sum_t = 0.0
    for start in range(0, n, cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        images = _batch_images(samples, batch, cfg.flip_probability, flip_rng)
        keys = compute_keys_batch(images, params, train_mode=True)
        opt.zero_grad()
        batch_loss = None
        for row, anchor in enumerate(batch):
            anchor = int(anchor)
            negatives = _random_negatives(cfg.seed, epoch, anchor, n, n_neg)
            loss_g = init_contrastive_loss(
                keys.global_keys[row], banks.mixture_bank, anchor, negatives, cfg.loss
            )
            loss_l = init_contrastive_loss(
                keys.local_keys[row], banks.mixture_bank, anchor, negatives, cfg.loss
            )
            loss = total_loss(loss_g, loss_l, cfg.loss.lambda_p)
            sum_g += loss_g.item()
            sum_l += loss_l.item()
            sum_t += loss.item()
            batch_loss = loss if batch_loss is None else batch_loss + loss
        _check_finite(batch_loss.item(), "init batch loss")
        batch_loss.backward()
        opt.step()
        _update_banks(banks, batch, keys, [(int(a),) for a in batch], cfg.mixture_features)
    return EpochRecord(epoch + 1, "init", sum_g / n, sum_l / n, sum_t / n)


def run_train_epoch(
    samples: list[ImageSample],
    params: ModelParams,
    banks: MemoryBanks,
    opt: SGDMomentum,
    cfg: TrainConfig,
    epoch: int,
    cameras: np.ndarray,
) -> EpochRecord:
    """Selective epoch: ranked selection per anchor, shared batch step."""
    n = len(samples)
    order = _epoch_order(cfg.seed, epoch, n)
    flip_rng = np.random.default_rng([cfg.seed, epoch, _FLIP_STREAM])
    sum_g = sum_l = sum_t = 0.0
    for start in range(0, n, cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        images = _batch_images(samples, batch, cfg.flip_probability, flip_rng)
        keys = compute_keys_batch(images, params, train_mode=True)
        opt.zero_grad()
        batch_loss = None
        positive_sets = []
        for row, anchor in enumerate(batch):
            anchor = int(anchor)
            anchor_keys = ProjectedKeys(
                global_key=keys.global_keys.data[row],
                stripe_keys=keys.stripe_keys.data[row],
                local_key=keys.local_keys.data[row],
            )
            selection = partition_and_select(anchor, anchor_keys, banks, cameras, cfg.similarity)
            positive_sets.append(selection.positives)
            loss_g = selective_contrastive_loss(
                keys.global_keys[row], banks.mixture_bank, selection, cfg.loss
            )
            loss_l = selective_contrastive_loss(
                keys.local_keys[row], banks.mixture_bank, selection, cfg.loss
            )
            loss = total_loss(loss_g, loss_l, cfg.loss.lambda_p)
            sum_g += loss_g.item()
            sum_l += loss_l.item()
            sum_t += loss.item()
            batch_loss = loss if batch_loss is None else batch_loss + loss
        _check_finite(batch_loss.item(), "train batch loss")
        batch_loss.backward()
        opt.step()
        _update_banks(banks, batch, keys, positive_sets, cfg.mixture_features)
    return EpochRecord(epoch + 1, "train", sum_g / n, sum_l / n, sum_t / n)


def _update_banks(banks, batch, keys, positive_sets, mixture_features: str):
    """Post-step bank updates, in batch sample order."""
    for row, anchor in enumerate(batch):
        anchor = int(anchor)
        g = keys.global_keys.data[row]
        s = keys.stripe_keys.data[row]
        l = keys.local_keys.data[row]
        banks.update_anchor_global(anchor, g)
        banks.update_anchor_local(anchor, s)
        banks.update_mixture_positives(positive_sets[row], g, l, features=mixture_features)


def build_trainer_state(
    num_samples: int, dims: ModelDims, cfg: TrainConfig
) -> tuple[ModelParams, MemoryBanks, SGDMomentum]:
    """Fresh parameters, banks, and optimizer for a run."""
    rng = np.random.default_rng([cfg.seed, _MODEL_STREAM])
    params = init_model(dims, rng, share_stripe_projection=cfg.share_stripe_projection)
    banks = init_banks(num_samples, dims.key_dim, dims.num_stripes)
    opt = SGDMomentum(params.named_parameters(), cfg.learning_rate, cfg.momentum)
    return params, banks, opt


def train(
    samples: list[ImageSample],
    dims: ModelDims,
    cfg: TrainConfig,
    state: tuple[ModelParams, MemoryBanks, SGDMomentum] | None = None,
    start_epoch: int = 0,
    records: list[EpochRecord] | None = None,
    epoch_callback=None,
) -> TrainResult:
    """Run epochs ``start_epoch``..``epochs`` (0-based), fresh or resumed."""
    cfg.validate()
    n = len(samples)
    if n == 0:
        raise ConfigError("training set is empty")
    if cfg.similarity.n_plus + cfg.similarity.n_minus > n - 1:
        raise ConfigError(
            f"n_plus + n_minus = {cfg.similarity.n_plus + cfg.similarity.n_minus} "
            f"exceeds the {n - 1} available candidates"
        )
    if state is None:
        params, banks, opt = build_trainer_state(n, dims, cfg)
    else:
        params, banks, opt = state
    if banks.num_samples != n:
        raise ConfigError(f"banks sized for {banks.num_samples} samples, dataset has {n}")
    records = list(records) if records else []
    cameras = np.array([s.camera for s in samples], dtype=np.int64)
    for epoch in range(start_epoch, cfg.epochs):
        if epoch < cfg.init_epochs:
            record = run_init_epoch(samples, params, banks, opt, cfg, epoch)
        else:
            record = run_train_epoch(samples, params, banks, opt, cfg, epoch, cameras)
        records.append(record)
        if epoch_callback is not None:
            epoch_callback(epoch, params, banks, opt, record)
    return TrainResult(params=params, banks=banks, optimizer=opt, records=records)
