"""Rank-based positive/negative selection around each training anchor.

For an anchor, every other sample gets a blended dissimilarity: beta
times the global bank distance plus (1 - beta) times the mean per-stripe
local bank distance, plus a flat camera penalty lambda_c when the
candidate shares the anchor's camera. Sorting ascending partitions the
candidates into the n_plus most similar (positives, anchor prepended),
the next n_minus (borderline negatives), and a discarded dissimilar
tail. Ties break by sample index so selection is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .memory import MemoryBanks


@dataclass
class SimilarityConfig:
    """Knobs for the blended dissimilarity and the partition sizes."""

    beta: float = 0.5
    lambda_c: float = 0.005
    n_plus: int = 7
    n_minus: int = 500

    def validate(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.lambda_c < 0.0:
            raise ConfigError(f"lambda_c must be >= 0, got {self.lambda_c}")
        if self.n_plus < 1:
            raise ConfigError(f"n_plus must be >= 1, got {self.n_plus}")
        if self.n_minus < 1:
            raise ConfigError(f"n_minus must be >= 1, got {self.n_minus}")


@dataclass(frozen=True)
class SampleSelection:
    """Outcome of one anchor's partition.

    ``positives`` always starts with the anchor itself; ``negatives``
    are the borderline candidates ranked immediately after the
    positives. The two sets never overlap.
    """

    anchor: int
    positives: tuple[int, ...]
    negatives: tuple[int, ...]


def _as_array(x) -> np.ndarray:
    data = getattr(x, "data", x)
    return np.asarray(data, dtype=np.float64)


def global_distance(global_key, banks: MemoryBanks, j: int) -> float:
    """Euclidean distance from a fresh global key to bank row j."""
    banks._check_row(j)
    if not banks.global_initialized[j]:
        raise ValueError(f"global bank row {j} read before initialization")
    v = _as_array(global_key)
    return float(np.linalg.norm(v - banks.global_bank[j]))


def local_distance(stripe_keys, banks: MemoryBanks, j: int) -> float:
    """Mean over stripes of per-stripe Euclidean distances to bank row j."""
    banks._check_row(j)
    if not banks.local_initialized[j]:
        raise ValueError(f"local bank row {j} read before initialization")
    v = _as_array(stripe_keys)
    return float(np.linalg.norm(v - banks.local_bank[j], axis=1).mean())


def camera_penalty(camera_i: int, camera_j: int, lambda_c: float) -> float:
    """Flat additive penalty for sharing a camera, zero otherwise."""
    return lambda_c if camera_i == camera_j else 0.0


def total_distance(global_dist: float, local_dist: float, penalty: float, beta: float) -> float:
    """Blend the two bank distances and add the camera penalty."""
    return beta * global_dist + (1.0 - beta) * local_dist + penalty


def blended_distances(
    anchor: int,
    global_key,
    stripe_keys,
    banks: MemoryBanks,
    cameras: np.ndarray,
    cfg: SimilarityConfig,
) -> np.ndarray:
    """Vector of blended dissimilarities to every sample; the anchor's own
    entry is +inf so it can never be picked as its own candidate."""
    banks._check_row(anchor)
    ok = np.ones(banks.num_samples, dtype=bool)
    ok[anchor] = False
    if not banks.global_initialized[ok].all() or not banks.local_initialized[ok].all():
        missing = int(np.flatnonzero(~(banks.global_initialized & banks.local_initialized) & ok)[0])
        raise ValueError(f"bank row {missing} read before initialization")
    g = _as_array(global_key)
    s = _as_array(stripe_keys)
    dist_g = np.linalg.norm(banks.global_bank - g, axis=1)
    dist_l = np.linalg.norm(banks.local_bank - s[None, :, :], axis=2).mean(axis=1)
    cameras = np.asarray(cameras)
    penalties = np.where(cameras == cameras[anchor], cfg.lambda_c, 0.0)
    blended = cfg.beta * dist_g + (1.0 - cfg.beta) * dist_l + penalties
    blended[anchor] = np.inf
    return blended


def select_from_distances(anchor: int, distances: np.ndarray, n_plus: int, n_minus: int) -> SampleSelection:
    """Partition candidates by ascending distance, ties broken by index.

    Depends on the distances only through their ordering.
    """
    n = distances.shape[0]
    if n - 1 < n_plus + n_minus:
        raise ConfigError(
            f"selection needs n_plus + n_minus = {n_plus + n_minus} candidates, "
            f"only {n - 1} available"
        )
    order = np.argsort(distances, kind="stable")
    ranked = order[order != anchor]
    positives = (anchor, *map(int, ranked[:n_plus]))
    negatives = tuple(map(int, ranked[n_plus : n_plus + n_minus]))
    return SampleSelection(anchor=anchor, positives=positives, negatives=negatives)


def partition_and_select(
    anchor: int,
    keys,
    banks: MemoryBanks,
    cameras: np.ndarray,
    cfg: SimilarityConfig,
) -> SampleSelection:
    """Full anchor selection: blended distances, then the ranked partition.

    ``keys`` carries the anchor's fresh global and stripe keys (the
    ProjectedKeys dataclass or anything with those attributes).
    """
    distances = blended_distances(
        anchor, keys.global_key, keys.stripe_keys, banks, cameras, cfg
    )
    return select_from_distances(anchor, distances, cfg.n_plus, cfg.n_minus)
