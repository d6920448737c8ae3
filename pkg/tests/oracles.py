"""Independent brute-force reference implementations used as test
oracles. Everything here is deliberately written with explicit loops
and no imports from the package under test."""

from __future__ import annotations

import math


def euclid(a, b) -> float:
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def blended_distance(
    v_global,
    v_stripes,
    bank_global_row,
    bank_local_row,
    same_camera: bool,
    beta: float,
    lambda_c: float,
) -> float:
    s_g = euclid(v_global, bank_global_row)
    stripe_dists = [euclid(v_stripes[k], bank_local_row[k]) for k in range(len(v_stripes))]
    s_l = sum(stripe_dists) / len(stripe_dists)
    cce = lambda_c if same_camera else 0.0
    return beta * s_g + (1.0 - beta) * s_l + cce


def select_oracle(
    anchor: int,
    v_global,
    v_stripes,
    global_bank,
    local_bank,
    cameras,
    beta: float,
    lambda_c: float,
    n_plus: int,
    n_minus: int,
):
    """Full sort with explicit (distance, index) lexicographic ties."""
    n = len(global_bank)
    scored = []
    for j in range(n):
        if j == anchor:
            continue
        d = blended_distance(
            v_global,
            v_stripes,
            global_bank[j],
            local_bank[j],
            cameras[j] == cameras[anchor],
            beta,
            lambda_c,
        )
        scored.append((d, j))
    scored.sort()
    ranked = [j for _, j in scored]
    positives = (anchor,) + tuple(ranked[:n_plus])
    negatives = tuple(ranked[n_plus : n_plus + n_minus])
    return positives, negatives


def cmc_map_oracle(
    dists,
    query_ids,
    query_cams,
    gallery_ids,
    gallery_cams,
    ks=(1, 5, 10),
    exclude_same_camera=True,
):
    """Per-query full sort; returns (rank rates, mAP, skipped count)."""
    num_gallery = len(gallery_ids)
    hits_at = {k: 0 for k in ks}
    ap_values = []
    skipped = 0
    for qi in range(len(query_ids)):
        entries = []
        for gi in range(num_gallery):
            if (
                exclude_same_camera
                and gallery_ids[gi] == query_ids[qi]
                and gallery_cams[gi] == query_cams[qi]
            ):
                continue
            entries.append((float(dists[qi][gi]), gi))
        entries.sort()
        matches = [1 if gallery_ids[gi] == query_ids[qi] else 0 for _, gi in entries]
        if sum(matches) == 0:
            skipped += 1
            continue
        first_hit = matches.index(1)
        for k in ks:
            if first_hit < k:
                hits_at[k] += 1
        precisions = []
        seen = 0
        for pos, m in enumerate(matches):
            if m:
                seen += 1
                precisions.append(seen / (pos + 1))
        ap_values.append(sum(precisions) / len(precisions))
    evaluated = len(query_ids) - skipped
    rates = {k: (hits_at[k] / evaluated if evaluated else 0.0) for k in ks}
    m_ap = sum(ap_values) / evaluated if evaluated else 0.0
    return rates, m_ap, skipped


def distance_matrix_oracle(queries, gallery):
    return [[euclid(q, g) for g in gallery] for q in queries]


# -- random instance generators (numpy only, nothing from the package) ------

import numpy as np


def _unit_rows(rng, shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def make_selection_instance(rng, max_n: int = 50) -> dict:
    """Random anchor-selection problem; half the instances contain a
    bit-exact duplicated candidate pair to exercise tie handling."""
    n = int(rng.integers(5, max_n + 1))
    n_plus = int(rng.integers(1, min(8, n - 1)))
    n_minus = int(rng.integers(1, n - n_plus))
    num_stripes = int(rng.integers(1, 5))
    d = int(rng.integers(2, 9))
    anchor = int(rng.integers(n))
    global_bank = _unit_rows(rng, (n, d))
    local_bank = _unit_rows(rng, (n, num_stripes, d))
    cameras = rng.integers(0, 3, size=n)
    if rng.random() < 0.5:
        candidates = [j for j in range(n) if j != anchor]
        a, b = rng.choice(candidates, size=2, replace=False)
        global_bank[b] = global_bank[a]
        local_bank[b] = local_bank[a]
        cameras[b] = cameras[a]
    return {
        "n": n,
        "anchor": anchor,
        "v_global": _unit_rows(rng, d),
        "v_stripes": _unit_rows(rng, (num_stripes, d)),
        "global_bank": global_bank,
        "local_bank": local_bank,
        "cameras": cameras,
        "beta": float(rng.random()),
        "lambda_c": float(rng.choice([0.0, 0.005, 0.1])),
        "n_plus": n_plus,
        "n_minus": n_minus,
    }


def make_retrieval_instance(rng, max_q: int = 20, max_m: int = 50) -> dict:
    """Random retrieval problem with guaranteed-nonempty gallery and a
    mix of camera overlaps."""
    q = int(rng.integers(1, max_q + 1))
    m = int(rng.integers(2, max_m + 1))
    num_ids = int(rng.integers(1, 6))
    num_cams = int(rng.integers(1, 4))
    d = int(rng.integers(2, 6))
    return {
        "queries": rng.standard_normal((q, d)),
        "gallery": rng.standard_normal((m, d)),
        "query_ids": rng.integers(0, num_ids, size=q),
        "query_cams": rng.integers(0, num_cams, size=q),
        "gallery_ids": rng.integers(0, num_ids, size=m),
        "gallery_cams": rng.integers(0, num_cams, size=m),
    }
