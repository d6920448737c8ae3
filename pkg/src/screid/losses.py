"""Selective contrastive objectives over the mixture bank.

The training loss for an anchor key v with positive set P (anchor
included) and negative set M is

    -log( sum_{k in P} mu_k * exp(v . m_k / tau)
          / sum_{k in P u M} exp(v . m_k / tau) )

where m_k are mixture bank rows and mu_k weights the anchor by lambda_t
and every other positive by alpha * (1 - lambda_t) / |P|. Because the
weights may sum past one, the loss can go slightly negative; that is
expected. The warm-up variant keeps only the anchor itself as positive
(weight one) against randomly drawn negatives. Both use max-subtracted
log-sum-exp so small temperatures stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericalError
from .sampling import SampleSelection


@dataclass
class LossConfig:
    tau: float = 0.05
    lambda_t: float = 0.5
    alpha: float = 1.75
    lambda_p: float = 0.5

    def validate(self):
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.lambda_t <= 1.0:
            raise ConfigError(f"lambda_t must lie in [0, 1], got {self.lambda_t}")
        if self.alpha <= 0.0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.lambda_p <= 1.0:
            raise ConfigError(f"lambda_p must lie in [0, 1], got {self.lambda_p}")


def contribution_factors(positives, anchor: int, cfg: LossConfig) -> dict[int, float]:
    """Per-positive weights: lambda_t for the anchor, the rest split an
    alpha-expanded share of (1 - lambda_t) evenly (divided by the full
    positive-set size, anchor included)."""
    positives = [int(k) for k in positives]
    if anchor not in positives:
        raise ValueError(f"anchor {anchor} missing from positive set {positives}")
    share = cfg.alpha * (1.0 - cfg.lambda_t) / len(positives)
    return {k: (cfg.lambda_t if k == anchor else share) for k in positives}


def _logits(v: Tensor, mixture: np.ndarray, indices: np.ndarray, tau: float) -> Tensor:
    keys = Tensor(mixture[indices])
    logits = ad.matmul(keys, v) / tau
    if not np.isfinite(logits.data).all():
        bad = int(indices[int(np.flatnonzero(~np.isfinite(logits.data))[0])])
        raise NumericalError(f"non-finite similarity logit for mixture key {bad}")
    return logits


def selective_contrastive_loss(
    v: Tensor, mixture: np.ndarray, selection: SampleSelection, cfg: LossConfig
) -> Tensor:
    """Weighted contrastive loss for one anchor key against its selection."""
    pos = np.asarray(selection.positives, dtype=np.intp)
    neg = np.asarray(selection.negatives, dtype=np.intp)
    if np.intersect1d(pos, neg).size:
        raise ValueError("positive and negative sets overlap")
    factors = contribution_factors(selection.positives, selection.anchor, cfg)
    weights = np.array([factors[int(k)] for k in pos])
    logits = _logits(v, mixture, np.concatenate([pos, neg]), cfg.tau)
    numerator = ad.logsumexp(logits[: len(pos)], weights)
    denominator = ad.logsumexp(logits)
    return denominator - numerator


def init_contrastive_loss(
    v: Tensor, mixture: np.ndarray, anchor: int, negatives, cfg: LossConfig
) -> Tensor:
    """Warm-up loss: the anchor's own mixture row is the only positive."""
    neg = np.asarray(list(negatives), dtype=np.intp)
    if anchor in neg:
        raise ValueError(f"anchor {anchor} appears in its own negative set")
    indices = np.concatenate([np.array([anchor], dtype=np.intp), neg])
    logits = _logits(v, mixture, indices, cfg.tau)
    denominator = ad.logsumexp(logits)
    return denominator - logits[0]


def total_loss(loss_global: Tensor, loss_local: Tensor, lambda_p: float) -> Tensor:
    """Blend the global-key and local-key losses."""
    return (1.0 - lambda_p) * loss_global + lambda_p * loss_local
