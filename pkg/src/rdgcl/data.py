"""Synthetic interaction logs and split helpers."""

from __future__ import annotations

import numpy as np

from .graph import InteractionSet


def two_community(n_users=200, n_items=100, p_in=0.3, p_out=0.01, test_frac=0.2,
                  seed=0) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """Planted two-block interaction log, split per user into train/test records.

    Users and items are divided into two equal halves; a user interacts with an
    item of its own half with probability ``p_in`` and otherwise with ``p_out``.
    Each user with at least two interactions keeps at least one in train.
    """
    rng = np.random.default_rng(seed)
    u_block = np.arange(n_users) * 2 // n_users
    v_block = np.arange(n_items) * 2 // n_items
    prob = np.where(u_block[:, None] == v_block[None, :], p_in, p_out)
    mask = rng.random((n_users, n_items)) < prob
    train, test = [], []
    for u in range(n_users):
        items = np.flatnonzero(mask[u])
        rng.shuffle(items)
        n_test = int(round(test_frac * items.size)) if items.size >= 2 else 0
        n_test = min(n_test, items.size - 1)
        for j, v in enumerate(items):
            (test if j < n_test else train).append((f"u{u}", f"i{v}"))
    # stable record order independent of the shuffle
    train.sort(key=lambda r: (int(r[0][1:]), int(r[1][1:])))
    test.sort(key=lambda r: (int(r[0][1:]), int(r[1][1:])))
    return train, test


def holdout_split(inter: InteractionSet, frac: float, rng: np.random.Generator) -> tuple[InteractionSet, InteractionSet]:
    """Hold out ``round(frac * degree)`` pairs per user, never a user's last pair."""
    keep_u, keep_v, out_u, out_v = [], [], [], []
    for u, items in enumerate(inter.user_items):
        n_out = min(int(round(frac * items.size)), max(items.size - 1, 0))
        picked = rng.permutation(items.size)
        out_idx = np.sort(picked[:n_out])
        mask = np.ones(items.size, dtype=bool)
        mask[out_idx] = False
        keep_u.append(np.full(mask.sum(), u))
        keep_v.append(items[mask])
        out_u.append(np.full(n_out, u))
        out_v.append(items[~mask])

    def make(us, vs):
        us = np.concatenate(us) if us else np.empty(0, np.int64)
        vs = np.concatenate(vs) if vs else np.empty(0, np.int64)
        return InteractionSet(inter.num_users, inter.num_items, us, vs, inter.user_ids, inter.item_ids)

    return make(keep_u, keep_v), make(out_u, out_v)


def random_ranking_recall(train: InteractionSet, test: InteractionSet, k: int) -> float:
    """Expected Recall@k of a uniformly random ranking over each user's unobserved items.

    Every test item lands in the top-k with probability min(k, C)/C where C is
    the user's candidate count, so per-user expected recall is that ratio.
    """
    cand = train.num_items - train.user_degree
    has_test = test.user_degree > 0
    c = cand[has_test].astype(float)
    return float(np.mean(np.minimum(k, c) / c))
