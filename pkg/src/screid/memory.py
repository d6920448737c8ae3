"""Dynamic memory banks holding one key per training sample.

Three banks: global keys (N x d), per-stripe local keys (N x S x d), and
the mixture bank (N x d) that blends both and feeds the contrastive
loss. Every update averages the stored row with an incoming unit key and
re-normalizes, so touched rows stay unit norm; rows start at zero and
the first fuse lands exactly on the incoming key. Banks live outside the
autodiff graph: updates take detached numpy vectors and gradients never
reach them.
"""

from __future__ import annotations

import numpy as np

from . import autodiff
from .autodiff import NORM_FLOOR


def _fuse(current: np.ndarray, incoming: np.ndarray) -> np.ndarray:
    """Average then re-normalize; degenerate norms pass through unchanged."""
    merged = (current + incoming) / 2.0
    norm = float(np.linalg.norm(merged))
    if norm < NORM_FLOOR:
        autodiff.diagnostics["norm_floor_hits"] += 1
        return merged
    return merged / norm


class MemoryBanks:
    """Bank storage plus the update rules.

    ``trace``, when set to a list, records ("bank_name", row) for every
    row written; tests use it to audit that only intended rows change.
    """

    def __init__(self, num_samples: int, key_dim: int, num_stripes: int, trace: bool = False):
        if num_samples < 1 or key_dim < 1 or num_stripes < 1:
            raise ValueError(
                f"banks need positive sizes, got N={num_samples} d={key_dim} S={num_stripes}"
            )
        self.num_samples = num_samples
        self.key_dim = key_dim
        self.num_stripes = num_stripes
        self.global_bank = np.zeros((num_samples, key_dim))
        self.local_bank = np.zeros((num_samples, num_stripes, key_dim))
        self.mixture_bank = np.zeros((num_samples, key_dim))
        self.global_initialized = np.zeros(num_samples, dtype=bool)
        self.local_initialized = np.zeros(num_samples, dtype=bool)
        self.mixture_initialized = np.zeros(num_samples, dtype=bool)
        self.trace: list[tuple[str, int]] | None = [] if trace else None

    def _check_row(self, i: int):
        if not 0 <= i < self.num_samples:
            raise IndexError(f"bank row {i} out of range [0, {self.num_samples})")

    def _record(self, bank: str, i: int):
        if self.trace is not None:
            self.trace.append((bank, i))

    def update_anchor_global(self, i: int, global_key: np.ndarray):
        """Fold a sample's fresh global key into its own global-bank row."""
        self._check_row(i)
        v = np.asarray(global_key, dtype=np.float64)
        if v.shape != (self.key_dim,):
            raise ValueError(f"global key shape {v.shape}, expected ({self.key_dim},)")
        self.global_bank[i] = _fuse(self.global_bank[i], v)
        self.global_initialized[i] = True
        self._record("global", i)

    def update_anchor_local(self, i: int, stripe_keys: np.ndarray):
        """Fold fresh per-stripe keys into the sample's local-bank row."""
        self._check_row(i)
        v = np.asarray(stripe_keys, dtype=np.float64)
        if v.shape != (self.num_stripes, self.key_dim):
            raise ValueError(
                f"stripe keys shape {v.shape}, expected ({self.num_stripes}, {self.key_dim})"
            )
        for s in range(self.num_stripes):
            self.local_bank[i, s] = _fuse(self.local_bank[i, s], v[s])
        self.local_initialized[i] = True
        self._record("local", i)

    def update_mixture_positives(
        self,
        positives,
        global_key: np.ndarray,
        local_key: np.ndarray,
        features: str = "both",
    ):
        """Fold the anchor's keys into the mixture rows of its positive set.

        Each row is fused with the global key and then, separately, with
        the concatenated-local key, re-normalizing after each fuse.
        ``features`` restricts the update to one of the two keys for the
        single-feature training variants.
        """
        if features not in ("both", "global", "local"):
            raise ValueError(f"unknown mixture feature selection {features!r}")
        g = np.asarray(global_key, dtype=np.float64)
        l = np.asarray(local_key, dtype=np.float64)
        for k in positives:
            self._check_row(int(k))
        for k in positives:
            k = int(k)
            if features in ("both", "global"):
                self.mixture_bank[k] = _fuse(self.mixture_bank[k], g)
            if features in ("both", "local"):
                self.mixture_bank[k] = _fuse(self.mixture_bank[k], l)
            self.mixture_initialized[k] = True
            self._record("mixture", k)


def init_banks(num_samples: int, key_dim: int, num_stripes: int) -> MemoryBanks:
    return MemoryBanks(num_samples, key_dim, num_stripes)
