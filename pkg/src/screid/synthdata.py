"""Seeded synthetic multi-camera identity dataset.

Each identity owns a band pattern: a unit vector over (horizontal band,
channel) cells, piecewise constant across each band of image rows, plus
a small per-channel shift that is constant over the whole image. Band
patterns are rejection-sampled for a minimum pairwise angle so
identities stay separable. Every camera adds its own per-channel tint
shared by all identities (the nuisance factor that makes the cross-camera
penalty meaningful), and every image gets fresh Gaussian pixel noise.

For each (identity, camera) pair a fixed number of images is held out:
the first becomes a query, the rest gallery; the remainder trains. Pixels
are quantized to float32 at creation so file round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError

MAGIC = b"SCRD"
FORMAT_VERSION = 1

# Sub-stream tags appended to the seed so the generator's rng draws stay
# independent of one another.
_PROTO_STREAM = 101
_TINT_STREAM = 102
_IMAGE_STREAM = 103


@dataclass
class DatasetSpec:
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
    seed: int = 0

    def validate(self):
        if self.num_identities < 2:
            raise ConfigError("need at least 2 identities")
        if self.num_cameras < 2:
            raise ConfigError("need at least 2 cameras for cross-camera retrieval")
        if self.eval_holdout_per_identity_camera < 2:
            raise ConfigError("holdout must be >= 2 (one query plus gallery remainder)")
        if self.images_per_identity_camera <= self.eval_holdout_per_identity_camera:
            raise ConfigError(
                f"images per (identity, camera) = {self.images_per_identity_camera} leaves no "
                f"training images after holding out {self.eval_holdout_per_identity_camera}"
            )
        if self.image_height % self.identity_bands != 0:
            raise ConfigError(
                f"image height {self.image_height} not divisible into {self.identity_bands} bands"
            )
        if not 0.0 < self.min_prototype_angle_deg < 90.0:
            raise ConfigError("prototype separation angle must lie in (0, 90) degrees")
        if self.noise_scale < 0.0:
            raise ConfigError("noise scale must be >= 0")


@dataclass
class ImageSample:
    pixels: np.ndarray  # (H, W, C) float32 in [0, 1]
    camera: int
    identity: int


@dataclass
class DatasetSplits:
    train: list[ImageSample] = field(default_factory=list)
    query: list[ImageSample] = field(default_factory=list)
    gallery: list[ImageSample] = field(default_factory=list)


def _band_patterns(spec: DatasetSpec) -> np.ndarray:
    """Unit band-pattern vectors with enforced pairwise angular separation."""
    rng = np.random.default_rng([spec.seed, _PROTO_STREAM])
    dim = spec.identity_bands * spec.image_channels
    max_dot = np.cos(np.radians(spec.min_prototype_angle_deg))
    accepted: list[np.ndarray] = []
    attempts = 0
    limit = 10000 * spec.num_identities
    while len(accepted) < spec.num_identities:
        attempts += 1
        if attempts > limit:
            raise ConfigError(
                f"could not place {spec.num_identities} prototypes at "
                f">= {spec.min_prototype_angle_deg} degrees apart after {limit} draws"
            )
        candidate = rng.normal(size=dim)
        candidate /= np.linalg.norm(candidate)
        if all(float(candidate @ other) <= max_dot for other in accepted):
            accepted.append(candidate)
    return np.stack(accepted).reshape(spec.num_identities, spec.identity_bands, spec.image_channels)


def _global_shifts(spec: DatasetSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, _PROTO_STREAM, 1])
    shifts = rng.normal(size=(spec.num_identities, spec.image_channels))
    shifts /= np.linalg.norm(shifts, axis=1, keepdims=True)
    return shifts


def _camera_tints(spec: DatasetSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, _TINT_STREAM])
    tints = rng.normal(size=(spec.num_cameras, spec.image_channels))
    tints /= np.linalg.norm(tints, axis=1, keepdims=True)
    return tints


def prototype_images(spec: DatasetSpec) -> np.ndarray:
    """The noiseless, untinted image of each identity, (G, H, W, C)."""
    spec.validate()
    bands = _band_patterns(spec)
    shifts = _global_shifts(spec)
    rows_per_band = spec.image_height // spec.identity_bands
    # (G, bands, C) -> (G, H, C), piecewise constant over each band's rows
    per_row = np.repeat(bands, rows_per_band, axis=1)
    images = (
        0.5
        + spec.identity_band_scale * per_row[:, :, None, :]
        + spec.identity_global_scale * shifts[:, None, None, :]
    )
    return np.broadcast_to(
        images, (spec.num_identities, spec.image_height, spec.image_width, spec.image_channels)
    ).copy()


def generate_dataset(spec: DatasetSpec) -> DatasetSplits:
    """Render every (identity, camera, image) and split train/query/gallery."""
    spec.validate()
    prototypes = prototype_images(spec)
    tints = _camera_tints(spec)
    splits = DatasetSplits()
    holdout = spec.eval_holdout_per_identity_camera
    for identity in range(spec.num_identities):
        rng = np.random.default_rng([spec.seed, _IMAGE_STREAM, identity])
        for camera in range(spec.num_cameras):
            base = prototypes[identity] + spec.camera_tint_scale * tints[camera]
            batch = []
            for _ in range(spec.images_per_identity_camera):
                noise = rng.normal(0.0, spec.noise_scale, size=base.shape)
                pixels = np.clip(base + noise, 0.0, 1.0).astype(np.float32)
                batch.append(ImageSample(pixels=pixels, camera=camera, identity=identity))
            held = rng.permutation(len(batch))[:holdout]
            held_set = set(int(h) for h in held)
            splits.query.append(batch[int(held[0])])
            for h in held[1:]:
                splits.gallery.append(batch[int(h)])
            for idx, sample in enumerate(batch):
                if idx not in held_set:
                    splits.train.append(sample)
    return splits


def augment_flip(sample: ImageSample, p: float, rng: np.random.Generator) -> ImageSample:
    """Mirror along width with probability p; labels unchanged."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"flip probability must lie in [0, 1], got {p}")
    if p > 0.0 and rng.random() < p:
        return ImageSample(
            pixels=np.ascontiguousarray(sample.pixels[:, ::-1, :]),
            camera=sample.camera,
            identity=sample.identity,
        )
    return sample


# -- file format ----------------------------------------------------------


def _write_samples(fh, samples: list[ImageSample]):
    for sample in samples:
        h, w, c = sample.pixels.shape
        fh.write(struct.pack("<IHHHH", sample.identity, sample.camera, h, w, c))
        fh.write(np.ascontiguousarray(sample.pixels, dtype="<f4").tobytes())


def save_dataset(path, splits: DatasetSplits):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<III", len(splits.train), len(splits.query), len(splits.gallery)))
        for part in (splits.train, splits.query, splits.gallery):
            _write_samples(fh, part)


def _read_exact(fh, n: int, what: str) -> bytes:
    offset = fh.tell()
    data = fh.read(n)
    if len(data) != n:
        raise DataFormatError(f"truncated dataset file: wanted {n} bytes for {what} at offset {offset}")
    return data


def load_dataset(path) -> DatasetSplits:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataFormatError(f"cannot read dataset {path}: {exc}") from None
    with fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise DataFormatError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise DataFormatError(f"unsupported dataset format version {version} at offset 4")
        counts = struct.unpack("<III", _read_exact(fh, 12, "split counts"))
        splits = DatasetSplits()
        for count, part in zip(counts, (splits.train, splits.query, splits.gallery)):
            for _ in range(count):
                header = _read_exact(fh, 12, "sample header")
                identity, camera, h, w, c = struct.unpack("<IHHHH", header)
                raw = _read_exact(fh, 4 * h * w * c, "pixel data")
                pixels = np.frombuffer(raw, dtype="<f4").reshape(h, w, c)
                part.append(ImageSample(pixels=pixels.copy(), camera=camera, identity=identity))
        trailing = fh.read(1)
        if trailing:
            raise DataFormatError(f"trailing bytes at offset {fh.tell() - 1}")
    return splits


def nearest_prototype_accuracy(samples: list[ImageSample], spec: DatasetSpec) -> float:
    """Fraction of samples whose nearest identity prototype is their own.

    The generator's separability check: with sane scales this is 1.0.
    """
    prototypes = prototype_images(spec).reshape(spec.num_identities, -1)
    correct = 0
    for sample in samples:
        flat = sample.pixels.astype(np.float64).reshape(-1)
        dists = np.linalg.norm(prototypes - flat, axis=1)
        if int(np.argmin(dists)) == sample.identity:
            correct += 1
    return correct / len(samples) if samples else 0.0
