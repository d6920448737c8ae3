"""Toy encoder, spatial pooling, and key projection heads.

The encoder maps a small RGB image to a C x H x W feature map by running
two shared affine+ReLU stages over equal-height row blocks, so row j of
the map is computed from row block j of the image and horizontal stripes
stay meaningful. Pooled features pass through three projection heads
(global, per-stripe shared, concatenated-stripes), each a fully connected
layer followed by batch norm and L2 normalization, producing unit-norm
keys for the memory banks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class ModelDims:
    """Static sizes wired through encoder and heads."""

    image_height: int = 32
    image_width: int = 16
    image_channels: int = 3
    encoder_hidden: int = 128
    channels: int = 64
    feature_height: int = 8
    feature_width: int = 4
    num_stripes: int = 8
    key_dim: int = 64

    def validate(self):
        if self.image_height % self.feature_height != 0:
            raise ValueError(
                f"image height {self.image_height} not divisible by feature height {self.feature_height}"
            )
        if self.feature_height % self.num_stripes != 0:
            raise ValueError(
                f"feature height {self.feature_height} not divisible by stripe count {self.num_stripes}"
            )

    @property
    def block_rows(self) -> int:
        return self.image_height // self.feature_height

    @property
    def block_dim(self) -> int:
        return self.block_rows * self.image_width * self.image_channels

    @property
    def map_width_dim(self) -> int:
        return self.channels * self.feature_width


@dataclass
class LinearParams:
    weight: Tensor  # (in_dim, out_dim)
    bias: Tensor  # (out_dim,)


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def create(cls, dim: int) -> "BatchNormParams":
        return cls(
            gamma=Tensor(np.ones(dim), requires_grad=True),
            beta=Tensor(np.zeros(dim), requires_grad=True),
            running_mean=np.zeros(dim),
            running_var=np.ones(dim),
        )


@dataclass
class ProjectionParams:
    fc: LinearParams
    bn: BatchNormParams


@dataclass
class ModelParams:
    dims: ModelDims
    enc1: LinearParams
    enc2: LinearParams
    proj_global: ProjectionParams
    proj_stripe: ProjectionParams
    proj_concat: ProjectionParams

    def named_parameters(self) -> dict[str, Tensor]:
        """Trainable tensors keyed by stable names, deduplicated.

        When the stripe head shares the global head's parameters the
        shared tensors appear once, under the global head's name.
        """
        named: dict[str, Tensor] = {}
        seen: set[int] = set()

        def put(name: str, t: Tensor):
            if id(t) not in seen:
                seen.add(id(t))
                named[name] = t

        put("enc1.weight", self.enc1.weight)
        put("enc1.bias", self.enc1.bias)
        put("enc2.weight", self.enc2.weight)
        put("enc2.bias", self.enc2.bias)
        for head_name, head in (
            ("proj_global", self.proj_global),
            ("proj_stripe", self.proj_stripe),
            ("proj_concat", self.proj_concat),
        ):
            put(f"{head_name}.fc.weight", head.fc.weight)
            put(f"{head_name}.fc.bias", head.fc.bias)
            put(f"{head_name}.bn.gamma", head.bn.gamma)
            put(f"{head_name}.bn.beta", head.bn.beta)
        return named

    def named_buffers(self) -> dict[str, np.ndarray]:
        named: dict[str, np.ndarray] = {}
        seen: set[int] = set()
        for head_name, head in (
            ("proj_global", self.proj_global),
            ("proj_stripe", self.proj_stripe),
            ("proj_concat", self.proj_concat),
        ):
            for buf_name, buf in (
                ("running_mean", head.bn.running_mean),
                ("running_var", head.bn.running_var),
            ):
                if id(buf) not in seen:
                    seen.add(id(buf))
                    named[f"{head_name}.bn.{buf_name}"] = buf
        return named


@dataclass
class PooledFeatures:
    """Channel means of the feature map: one global vector, one per stripe."""

    global_vec: Tensor  # (C,)
    stripes: Tensor  # (num_stripes, C)


@dataclass
class ProjectedKeys:
    """Unit-norm keys for one sample."""

    global_key: Tensor  # (key_dim,)
    stripe_keys: Tensor  # (num_stripes, key_dim)
    local_key: Tensor  # (key_dim,), projected from the stripe concatenation


@dataclass
class BatchKeys:
    """Unit-norm keys for a whole batch, kept in the autodiff graph."""

    global_keys: Tensor  # (n, key_dim)
    stripe_keys: Tensor  # (n, num_stripes, key_dim)
    local_keys: Tensor  # (n, key_dim)


def _init_linear(rng: np.random.Generator, in_dim: int, out_dim: int, scale: float) -> LinearParams:
    weight = rng.normal(0.0, scale, size=(in_dim, out_dim))
    return LinearParams(
        weight=Tensor(weight, requires_grad=True),
        bias=Tensor(np.zeros(out_dim), requires_grad=True),
    )


def _init_projection(rng: np.random.Generator, in_dim: int, out_dim: int) -> ProjectionParams:
    scale = np.sqrt(2.0 / (in_dim + out_dim))
    return ProjectionParams(fc=_init_linear(rng, in_dim, out_dim, scale), bn=BatchNormParams.create(out_dim))


def init_model(dims: ModelDims, rng: np.random.Generator, share_stripe_projection: bool = False) -> ModelParams:
    """Seeded parameter initialization; He scale for the ReLU stages."""
    dims.validate()
    enc1 = _init_linear(rng, dims.block_dim, dims.encoder_hidden, np.sqrt(2.0 / dims.block_dim))
    enc2 = _init_linear(rng, dims.encoder_hidden, dims.map_width_dim, np.sqrt(2.0 / dims.encoder_hidden))
    proj_global = _init_projection(rng, dims.channels, dims.key_dim)
    if share_stripe_projection:
        proj_stripe = proj_global
    else:
        proj_stripe = _init_projection(rng, dims.channels, dims.key_dim)
    proj_concat = _init_projection(rng, dims.num_stripes * dims.channels, dims.key_dim)
    return ModelParams(
        dims=dims,
        enc1=enc1,
        enc2=enc2,
        proj_global=proj_global,
        proj_stripe=proj_stripe,
        proj_concat=proj_concat,
    )


# -- forward passes -------------------------------------------------------


def extract_features_batch(images: np.ndarray, params: ModelParams, train_mode: bool) -> Tensor:
    """Encode a batch of images to feature maps laid out (n, H, C, W).

    Row h of each map depends only on row block h of the image. The
    encoder has no batch coupling, so batch and single-sample paths agree
    exactly.
    """
    dims = params.dims
    images = np.asarray(images, dtype=np.float64)
    expected = (dims.image_height, dims.image_width, dims.image_channels)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise ValueError(f"extract_features: expected (n, {expected}) images, got {images.shape}")
    n = images.shape[0]

    def run():
        x = Tensor(images.reshape(n * dims.feature_height, dims.block_dim))
        h = ad.relu(ad.add(ad.matmul(x, params.enc1.weight), params.enc1.bias))
        y = ad.relu(ad.add(ad.matmul(h, params.enc2.weight), params.enc2.bias))
        return ad.reshape(y, (n, dims.feature_height, dims.channels, dims.feature_width))

    if train_mode:
        return run()
    with ad.no_grad():
        return run()


def extract_features(image: np.ndarray, params: ModelParams, train_mode: bool) -> Tensor:
    """Single image to a (C, H, W) feature map."""
    dims = params.dims
    fmap = extract_features_batch(np.asarray(image)[None], params, train_mode)
    fmap = ad.reshape(fmap, (dims.feature_height, dims.channels, dims.feature_width))
    return ad.transpose(fmap, (1, 0, 2))


def pool_features(fmap: Tensor, num_stripes: int) -> PooledFeatures:
    """Mean-pool a (C, H, W) map globally and per horizontal stripe.

    Stripes partition the rows into equal-height bands, so the global
    vector equals the mean of the stripe vectors.
    """
    if fmap.ndim != 3:
        raise ValueError(f"pool_features: expected (C, H, W), got {fmap.shape}")
    c, h, w = fmap.shape
    if h % num_stripes != 0:
        raise ValueError(f"pool_features: height {h} not divisible by {num_stripes} stripes")
    rows = h // num_stripes
    hwc = ad.transpose(fmap, (1, 0, 2))  # (H, C, W)
    banded = ad.reshape(hwc, (num_stripes, rows, c, w))
    stripes = ad.tmean(banded, axis=(1, 3))  # (num_stripes, C)
    global_vec = ad.tmean(stripes, axis=0)
    return PooledFeatures(global_vec=global_vec, stripes=stripes)


def pool_features_batch(fmap: Tensor, num_stripes: int) -> tuple[Tensor, Tensor]:
    """Batch variant over (n, H, C, W) maps; returns (n, C) and (n, S, C)."""
    n, h, c, w = fmap.shape
    rows = h // num_stripes
    banded = ad.reshape(fmap, (n, num_stripes, rows, c, w))
    stripes = ad.tmean(banded, axis=(2, 4))
    global_vec = ad.tmean(stripes, axis=1)
    return global_vec, stripes


def _project_rows(x: Tensor, head: ProjectionParams, train_mode: bool) -> Tensor:
    pre = ad.add(ad.matmul(x, head.fc.weight), head.fc.bias)
    normed = ad.batch_norm(
        pre,
        head.bn.gamma,
        head.bn.beta,
        head.bn.running_mean,
        head.bn.running_var,
        train=train_mode,
    )
    return ad.l2_normalize(normed)


def project_keys(pooled: PooledFeatures, params: ModelParams, train_mode: bool) -> ProjectedKeys:
    """Project one sample's pooled features to unit-norm keys.

    In train mode batch norm sees only this sample's rows; the batch path
    is what training uses, this one serves single-sample inspection and
    eval-style use.
    """
    dims = params.dims
    num_stripes = pooled.stripes.shape[0]
    g = ad.reshape(pooled.global_vec, (1, dims.channels))
    global_key = ad.reshape(_project_rows(g, params.proj_global, train_mode), (dims.key_dim,))
    stripe_keys = _project_rows(pooled.stripes, params.proj_stripe, train_mode)
    cat = ad.reshape(pooled.stripes, (1, num_stripes * dims.channels))
    local_key = ad.reshape(_project_rows(cat, params.proj_concat, train_mode), (dims.key_dim,))
    return ProjectedKeys(global_key=global_key, stripe_keys=stripe_keys, local_key=local_key)


def project_keys_batch(
    global_vec: Tensor, stripes: Tensor, params: ModelParams, train_mode: bool
) -> BatchKeys:
    """Project pooled batch features; batch norm statistics span the batch
    (and, for the stripe head, all stripes in the batch)."""
    dims = params.dims
    n, s, c = stripes.shape
    global_keys = _project_rows(global_vec, params.proj_global, train_mode)
    flat = ad.reshape(stripes, (n * s, c))
    stripe_keys = ad.reshape(_project_rows(flat, params.proj_stripe, train_mode), (n, s, dims.key_dim))
    cat = ad.reshape(stripes, (n, s * c))
    local_keys = _project_rows(cat, params.proj_concat, train_mode)
    return BatchKeys(global_keys=global_keys, stripe_keys=stripe_keys, local_keys=local_keys)


def compute_keys_batch(images: np.ndarray, params: ModelParams, train_mode: bool) -> BatchKeys:
    """Images straight to keys: encode, pool, project."""
    fmap = extract_features_batch(images, params, train_mode)
    global_vec, stripes = pool_features_batch(fmap, params.dims.num_stripes)
    if train_mode:
        return project_keys_batch(global_vec, stripes, params, train_mode)
    with ad.no_grad():
        return project_keys_batch(global_vec, stripes, params, train_mode)
