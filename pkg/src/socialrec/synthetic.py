"""Small planted-structure datasets for demos and behavioral tests."""

from __future__ import annotations

import numpy as np

from .data import Dataset, InteractionRecord, symmetric_adjacency


def rank_one_ratings(n_users: int = 20, n_items: int = 30, per_user: int = 20, noise: float = 0.25,
                     scale: float = 3.0, seed: int = 0) -> Dataset:
    """Ratings ``round(scale * a_u * b_j + N(0, noise))`` clipped to 1..5.

    User and item factors are drawn from U(0.5, 1.5), so the noiseless
    rating matrix has rank one. Users are linked in a ring, timestamps are
    random, events split chronologically.
    """
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 1.5, n_users)
    b = rng.uniform(0.5, 1.5, n_items)
    records = []
    for u in range(n_users):
        for j in rng.choice(n_items, size=per_user, replace=False):
            r = scale * a[u] * b[j] + rng.normal(0.0, noise)
            rating = int(np.clip(np.rint(r), 1, 5))
            records.append(InteractionRecord(u, int(j), rating, int(rng.integers(0, 1_000_000))))
    adj = symmetric_adjacency(n_users, [(u, (u + 1) % n_users) for u in range(n_users)])
    return Dataset.build(records, adj, (1, 2, 3, 4, 5), prune=True)


def homophily_clicks(n_clusters: int = 4, influencers: int = 1, followers: int = 40, n_items: int = 40,
                     influencer_events: int = 10, friends: int = 1, seed: int = 0) -> Dataset:
    """Implicit feedback where friends share a preferred item cluster.

    Items are dealt round-robin into ``n_clusters`` taste clusters. Each
    cluster has ``influencers`` users who click ``influencer_events`` distinct
    in-cluster items early on and are friends with each other. Each of its
    ``followers`` befriends ``friends`` of those influencers, clicks a shared
    hub item (index ``n_items``, outside every cluster) early, and makes one
    in-cluster click at a common final timestamp.

    Every follower has the same own history, so only its friends reveal its
    taste. Because the final clicks share one timestamp, the chronological
    split separates them by user id (ids are shuffled, so every cluster lands
    in every split) and they all see the same item histories.
    """
    rng = np.random.default_rng(seed)
    item_c = np.arange(n_items) % n_clusters
    n_users = n_clusters * (influencers + followers)
    ids = rng.permutation(n_users)
    records: list[InteractionRecord] = []
    pairs: list[tuple[int, int]] = []
    final = 1_000_000
    u = 0
    for c in range(n_clusters):
        pool = np.flatnonzero(item_c == c)
        stars = [int(ids[k]) for k in range(u, u + influencers)]
        pairs += [(a, b) for a in stars for b in stars if a < b]
        for a in stars:
            for j in rng.choice(pool, size=min(influencer_events, pool.size), replace=False):
                records.append(InteractionRecord(a, int(j), 1, int(rng.integers(0, final // 2))))
        u += influencers
        for k in range(u, u + followers):
            f = int(ids[k])
            for s in rng.choice(stars, size=min(friends, len(stars)), replace=False):
                pairs.append((f, int(s)))
            records.append(InteractionRecord(f, n_items, 1, int(rng.integers(final // 2, final))))
            records.append(InteractionRecord(f, int(rng.choice(pool)), 1, final))
        u += followers
    return Dataset.build(records, symmetric_adjacency(n_users, pairs), (1,), prune=True)


def star_fixture(n_neighbors: int = 10, seed: int = 0) -> Dataset:
    """One hub user with ``n_neighbors`` friends and one hub item co-rated with ``n_neighbors`` items.

    Used to lay out case-study style attention dumps.
    """
    rng = np.random.default_rng(seed)
    n_users = n_neighbors + 1
    n_items = n_neighbors + 1
    records = []
    t = 0
    for u in range(n_users):
        for j in (0, 1 + u % n_neighbors, 1 + (u + 3) % n_neighbors):
            t += 1
            records.append(InteractionRecord(u, j, int(rng.integers(1, 6)), t))
    # a late block so the split keeps every entity in training
    for k in range(10):
        t += 1
        records.append(InteractionRecord(k % n_users, 0, int(rng.integers(1, 6)), t))
    adj = symmetric_adjacency(n_users, [(0, o) for o in range(1, n_users)])
    return Dataset.build(records, adj, (1, 2, 3, 4, 5), prune=True)
