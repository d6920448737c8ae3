"""Retrieval evaluation: distance matrix, CMC rank-k, and mAP.

Queries are ranked against the gallery by Euclidean distance between
final global keys (extracted in eval mode). Per query, gallery entries
sharing both the query's identity and camera are excluded (the standard
protocol; switchable off). Queries left without any correct match in the
valid gallery are skipped and counted. Distance ties break by gallery
index, and metrics depend on distances only through their ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import ModelParams, compute_keys_batch
from .synthdata import ImageSample


@dataclass
class EvalReport:
    rank1: float
    rank5: float
    rank10: float
    mAP: float
    num_queries: int
    num_excluded: int

    def to_dict(self) -> dict:
        return {
            "rank1": self.rank1,
            "rank5": self.rank5,
            "rank10": self.rank10,
            "mAP": self.mAP,
            "num_queries": self.num_queries,
            "num_excluded": self.num_excluded,
        }


def distance_matrix(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances, (Q, M)."""
    queries = np.asarray(queries, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if queries.ndim != 2 or gallery.ndim != 2 or queries.shape[1] != gallery.shape[1]:
        raise ValueError(
            f"distance_matrix: incompatible shapes {queries.shape} and {gallery.shape}"
        )
    diff = queries[:, None, :] - gallery[None, :, :]
    return np.linalg.norm(diff, axis=2)


def _ranked_matches(
    dists: np.ndarray,
    query_ids: np.ndarray,
    query_cams: np.ndarray,
    gallery_ids: np.ndarray,
    gallery_cams: np.ndarray,
    exclude_same_camera: bool,
):
    """Yield (query index, boolean match vector over its valid ranked gallery)."""
    q, m = dists.shape
    if not (len(query_ids) == len(query_cams) == q and len(gallery_ids) == len(gallery_cams) == m):
        raise ValueError("label arrays do not match the distance matrix")
    for qi in range(q):
        order = np.argsort(dists[qi], kind="stable")
        if exclude_same_camera:
            keep = ~(
                (gallery_ids[order] == query_ids[qi]) & (gallery_cams[order] == query_cams[qi])
            )
            order = order[keep]
        matches = gallery_ids[order] == query_ids[qi]
        yield qi, matches


def cmc_rank_k(
    dists: np.ndarray,
    query_ids: np.ndarray,
    query_cams: np.ndarray,
    gallery_ids: np.ndarray,
    gallery_cams: np.ndarray,
    ks=(1, 5, 10),
    exclude_same_camera: bool = True,
) -> tuple[dict[int, float], int]:
    """Rank-k match rates over queries with at least one valid match.

    Returns the rates and the number of skipped queries.
    """
    hits = {k: 0 for k in ks}
    counted = 0
    skipped = 0
    for _, matches in _ranked_matches(
        dists, query_ids, query_cams, gallery_ids, gallery_cams, exclude_same_camera
    ):
        if not matches.any():
            skipped += 1
            continue
        counted += 1
        first = int(np.flatnonzero(matches)[0])
        for k in ks:
            if first < k:
                hits[k] += 1
    if counted == 0:
        return {k: 0.0 for k in ks}, skipped
    return {k: hits[k] / counted for k in ks}, skipped


def mean_average_precision(
    dists: np.ndarray,
    query_ids: np.ndarray,
    query_cams: np.ndarray,
    gallery_ids: np.ndarray,
    gallery_cams: np.ndarray,
    exclude_same_camera: bool = True,
) -> tuple[float, int]:
    """Mean over valid queries of average precision; also returns skips."""
    ap_sum = 0.0
    counted = 0
    skipped = 0
    for _, matches in _ranked_matches(
        dists, query_ids, query_cams, gallery_ids, gallery_cams, exclude_same_camera
    ):
        relevant = int(matches.sum())
        if relevant == 0:
            skipped += 1
            continue
        counted += 1
        positions = np.flatnonzero(matches)
        precision_at_hit = (np.arange(1, relevant + 1)) / (positions + 1)
        ap_sum += float(precision_at_hit.sum()) / relevant
    if counted == 0:
        return 0.0, skipped
    return ap_sum / counted, skipped


def extract_eval_features(
    samples: list[ImageSample],
    params: ModelParams,
    append_local: bool = False,
    batch_size: int = 256,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Global keys (optionally with the concatenated-local key appended,
    re-normalized), plus identity and camera labels."""
    feats = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        images = np.stack([s.pixels for s in chunk]).astype(np.float64)
        keys = compute_keys_batch(images, params, train_mode=False)
        f = keys.global_keys.data
        if append_local:
            f = np.concatenate([f, keys.local_keys.data], axis=1)
            f = ad.l2_normalize(f).data
        feats.append(f)
    ids = np.array([s.identity for s in samples], dtype=np.int64)
    cams = np.array([s.camera for s in samples], dtype=np.int64)
    return np.concatenate(feats, axis=0), ids, cams


def evaluate_retrieval(
    query_samples: list[ImageSample],
    gallery_samples: list[ImageSample],
    params: ModelParams,
    append_local: bool = False,
    exclude_same_camera: bool = True,
) -> EvalReport:
    """Full protocol: extract features, rank, report CMC and mAP."""
    qf, qids, qcams = extract_eval_features(query_samples, params, append_local)
    gf, gids, gcams = extract_eval_features(gallery_samples, params, append_local)
    dists = distance_matrix(qf, gf)
    ranks, skipped = cmc_rank_k(
        dists, qids, qcams, gids, gcams, ks=(1, 5, 10), exclude_same_camera=exclude_same_camera
    )
    m_ap, _ = mean_average_precision(
        dists, qids, qcams, gids, gcams, exclude_same_camera=exclude_same_camera
    )
    return EvalReport(
        rank1=ranks[1],
        rank5=ranks[5],
        rank10=ranks[10],
        mAP=m_ap,
        num_queries=len(query_samples) - skipped,
        num_excluded=skipped,
    )
