"""Interaction logs, social edges, chronological splits and per-entity histories."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TRAIN, VAL, TEST = "train", "val", "test"
SPLITS = (TRAIN, VAL, TEST)


class ParseError(ValueError):
    """A line of an input file could not be read."""


class ValidationError(ValueError):
    """Input was readable but violates a data contract."""


@dataclass(frozen=True)
class InteractionRecord:
    user: int
    item: int
    rating: int
    timestamp: int


class IdIndex:
    """Maps raw string ids to dense indices in first-seen order."""

    def __init__(self, raw_ids: Iterable[str] = ()):
        self.to_index: dict[str, int] = {}
        self.raw: list[str] = []
        for r in raw_ids:
            self.add(r)

    def add(self, raw: str) -> int:
        idx = self.to_index.get(raw)
        if idx is None:
            idx = self.to_index[raw] = len(self.raw)
            self.raw.append(raw)
        return idx

    def __len__(self) -> int:
        return len(self.raw)

    def __contains__(self, raw: str) -> bool:
        return raw in self.to_index

    def __getitem__(self, raw: str) -> int:
        return self.to_index[raw]


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def parse_interactions(path, rating_scale: Sequence[int] | None = (1, 2, 3, 4, 5),
                       users: IdIndex | None = None, items: IdIndex | None = None):
    """Read ``user<TAB>item<TAB>rating<TAB>timestamp`` lines.

    Returns ``(records, users, items)`` where the two :class:`IdIndex` objects
    hold the raw-id mappings. ``rating_scale=None`` accepts any non-zero
    integer rating.
    """
    users = IdIndex() if users is None else users
    items = IdIndex() if items is None else items
    allowed = None if rating_scale is None else set(rating_scale)
    records = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 4:
            raise ParseError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        u, i, r, t = parts
        try:
            rating = int(r)
            ts = int(t)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: rating and timestamp must be integers") from None
        if rating == 0 or (allowed is not None and rating not in allowed):
            raise ValidationError(f"{path}:{lineno}: rating {rating} outside scale {sorted(allowed or [])}")
        records.append(InteractionRecord(users.add(u), items.add(i), rating, ts))
    return records, users, items


def symmetric_adjacency(n_users: int, pairs: Iterable[tuple[int, int]]) -> list[list[int]]:
    """Symmetrize, drop self-loops and duplicates, sort each list."""
    sets: list[set[int]] = [set() for _ in range(n_users)]
    for a, b in pairs:
        if a == b:
            continue
        sets[a].add(b)
        sets[b].add(a)
    return [sorted(s) for s in sets]


def parse_social(path, users: IdIndex) -> list[list[int]]:
    """Read ``user<TAB>user`` lines into a symmetric adjacency over ``users``."""
    pairs = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 2 tab-separated fields, got {len(parts)}")
        for p in parts:
            if p not in users:
                raise ValidationError(f"{path}:{lineno}: unknown user id {p!r}")
        pairs.append((users[parts[0]], users[parts[1]]))
    return symmetric_adjacency(len(users), pairs)


def chronological_order(records: Sequence[InteractionRecord]) -> list[int]:
    """Record positions sorted by (timestamp, user, item)."""
    return sorted(range(len(records)),
                  key=lambda k: (records[k].timestamp, records[k].user, records[k].item))


def chronological_split(records: Sequence[InteractionRecord],
                        ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)) -> list[str]:
    """Label each record train/val/test by global time order.

    Boundaries sit at ``floor(N*r0)`` and ``floor(N*(r0+r1))``.
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValidationError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    n = len(records)
    if n < 3:
        raise ValidationError(f"need at least 3 records to split, got {n}")
    # the epsilon keeps floor(10*0.8) == 8 despite binary rounding
    b1 = int(np.floor(n * ratios[0] + 1e-9))
    b2 = int(np.floor(n * (ratios[0] + ratios[1]) + 1e-9))
    labels = [TRAIN] * n
    for rank, k in enumerate(chronological_order(records)):
        labels[k] = TRAIN if rank < b1 else VAL if rank < b2 else TEST
    return labels


@dataclass
class SparseRatingMatrix:
    """Column-major training ratings: ``columns[j] = (user_ids, values)``, users ascending."""

    n_users: int
    columns: list[tuple[np.ndarray, np.ndarray]]

    @property
    def n_items(self) -> int:
        return len(self.columns)

    def column(self, j: int) -> dict[int, float]:
        users, vals = self.columns[j]
        return dict(zip(users.tolist(), vals.tolist()))

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n_users, self.n_items))
        for j, (users, vals) in enumerate(self.columns):
            out[users, j] = vals
        return out


@dataclass
class History:
    """One entity's training events in ascending time order."""

    timestamps: np.ndarray
    counterparts: np.ndarray
    rating_idx: np.ndarray

    def before(self, tau: float, max_len: int | None = None) -> slice:
        """Slice of events with timestamp strictly below ``tau``, keeping the most recent ``max_len``."""
        end = int(np.searchsorted(self.timestamps, tau, side="left"))
        start = 0 if max_len is None else max(0, end - max_len)
        return slice(start, end)

    def __len__(self) -> int:
        return len(self.timestamps)


def _histories(n: int, events: list[tuple[int, int, int, int]]) -> list[History]:
    # events: (owner, counterpart, rating_idx, timestamp), already in global time order
    buckets: list[list[tuple[int, int, int]]] = [[] for _ in range(n)]
    for owner, other, r, t in events:
        buckets[owner].append((t, other, r))
    out = []
    for b in buckets:
        arr = np.array(b, dtype=np.int64).reshape(-1, 3)
        out.append(History(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy()))
    return out


@dataclass
class Dataset:
    n_users: int
    n_items: int
    interactions: list[InteractionRecord]
    rating_scale: tuple[int, ...]
    social_adj: list[list[int]]
    split: list[str]
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if not self.user_ids:
            self.user_ids = [str(i) for i in range(self.n_users)]
        if not self.item_ids:
            self.item_ids = [str(j) for j in range(self.n_items)]
        self.rating_scale = tuple(sorted(set(self.rating_scale)))
        self._rating_pos = {r: k for k, r in enumerate(self.rating_scale)}
        self.user_seqs, self.item_seqs = build_sequences(self)

    # construction -------------------------------------------------------

    @classmethod
    def build(cls, records: Sequence[InteractionRecord], social_adj: Sequence[Sequence[int]],
              rating_scale: Sequence[int], user_ids: Sequence[str] | None = None,
              item_ids: Sequence[str] | None = None,
              ratios: tuple[float, float, float] = (0.8, 0.1, 0.1), prune: bool = True) -> "Dataset":
        """Split chronologically, optionally pruning entities the model cannot represent.

        Pruning repeats until stable: users without a social link or without a
        training interaction, and items without a training interaction, are
        removed together with their events and edges, then the split is redone.
        """
        n_users = len(social_adj)
        n_items = 1 + max((r.item for r in records), default=-1)
        if item_ids is not None:
            n_items = max(n_items, len(item_ids))
        user_ids = list(user_ids) if user_ids is not None else [str(i) for i in range(n_users)]
        item_ids = list(item_ids) if item_ids is not None else [str(j) for j in range(n_items)]
        records = list(records)
        adj = [list(a) for a in social_adj]
        for r in records:
            if not (0 <= r.user < n_users and 0 <= r.item < n_items):
                raise ValidationError(f"record {r} out of range ({n_users} users, {n_items} items)")

        while True:
            labels = chronological_split(records, ratios)
            if not prune:
                break
            u_train = np.zeros(n_users, bool)
            i_train = np.zeros(n_items, bool)
            for r, lab in zip(records, labels):
                if lab == TRAIN:
                    u_train[r.user] = True
                    i_train[r.item] = True
            keep_u = u_train & np.array([len(a) > 0 for a in adj], dtype=bool)
            keep_i = i_train
            if keep_u.all() and keep_i.all():
                break
            u_new = np.cumsum(keep_u) - 1
            i_new = np.cumsum(keep_i) - 1
            records = [InteractionRecord(int(u_new[r.user]), int(i_new[r.item]), r.rating, r.timestamp)
                       for r in records if keep_u[r.user] and keep_i[r.item]]
            adj = [[int(u_new[b]) for b in a if keep_u[b]] for a, k in zip(adj, keep_u) if k]
            user_ids = [x for x, k in zip(user_ids, keep_u) if k]
            item_ids = [x for x, k in zip(item_ids, keep_i) if k]
            n_users, n_items = len(user_ids), len(item_ids)
        adj = symmetric_adjacency(n_users, ((a, b) for a, nb in enumerate(adj) for b in nb))
        return cls(n_users, n_items, records, tuple(rating_scale), adj, labels,
                   user_ids, item_ids, tuple(ratios))

    # views ------------------------------------------------------------------

    def rating_index(self, rating: int) -> int:
        return self._rating_pos[rating]

    def records_in(self, split: str) -> list[InteractionRecord]:
        order = chronological_order(self.interactions)
        return [self.interactions[k] for k in order if self.split[k] == split]

    def split_sizes(self) -> dict[str, int]:
        return {s: sum(1 for x in self.split if x == s) for s in SPLITS}

    def user_items(self, user: int) -> set[int]:
        """Every item the user touched in any split."""
        if not hasattr(self, "_user_items"):
            self._user_items = [set() for _ in range(self.n_users)]
            for r in self.interactions:
                self._user_items[r.user].add(r.item)
        return self._user_items[user]

    def n_social_links(self) -> int:
        return sum(len(a) for a in self.social_adj) // 2

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.n_users == other.n_users and self.n_items == other.n_items
                and self.interactions == other.interactions and self.rating_scale == other.rating_scale
                and self.social_adj == other.social_adj and self.split == other.split
                and self.user_ids == other.user_ids and self.item_ids == other.item_ids)

    # export -----------------------------------------------------------------

    def export(self, directory) -> None:
        """Write the processed-dataset layout (meta, tsv tables, id maps)."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {"n_users": self.n_users, "n_items": self.n_items,
                "n_interactions": len(self.interactions),
                "rating_scale": ",".join(map(str, self.rating_scale)),
                "ratios": ",".join(repr(float(r)) for r in self.ratios)}
        (d / "meta").write_text("".join(f"{k}\t{v}\n" for k, v in meta.items()), encoding="utf-8")
        with open(d / "interactions.tsv", "w", encoding="utf-8") as fh:
            for r, lab in zip(self.interactions, self.split):
                fh.write(f"{self.user_ids[r.user]}\t{self.item_ids[r.item]}\t{r.rating}\t{r.timestamp}\t{lab}\n")
        with open(d / "social.tsv", "w", encoding="utf-8") as fh:
            for a, nb in enumerate(self.social_adj):
                for b in nb:
                    if a < b:
                        fh.write(f"{self.user_ids[a]}\t{self.user_ids[b]}\n")
        for name, ids in (("users.map", self.user_ids), ("items.map", self.item_ids)):
            with open(d / name, "w", encoding="utf-8") as fh:
                fh.writelines(f"{raw}\t{k}\n" for k, raw in enumerate(ids))

    @classmethod
    def load(cls, directory) -> "Dataset":
        """Inverse of :meth:`export`; indices and split labels are preserved."""
        d = Path(directory)
        meta = read_kv(d / "meta")
        scale = tuple(int(x) for x in meta["rating_scale"].split(","))
        ratios = tuple(float(x) for x in meta["ratios"].split(","))
        maps = {}
        for name in ("users.map", "items.map"):
            ids: dict[int, str] = {}
            for _, line in _data_lines(d / name):
                raw, k = line.rsplit("\t", 1)
                ids[int(k)] = raw
            maps[name] = [ids[k] for k in range(len(ids))]
        users = IdIndex(maps["users.map"])
        items = IdIndex(maps["items.map"])
        records, labels = [], []
        for lineno, line in _data_lines(d / "interactions.tsv"):
            parts = line.split("\t")
            if len(parts) != 5 or parts[4] not in SPLITS:
                raise ParseError(f"{d / 'interactions.tsv'}:{lineno}: malformed processed record")
            records.append(InteractionRecord(users[parts[0]], items[parts[1]], int(parts[2]), int(parts[3])))
            labels.append(parts[4])
        adj = parse_social(d / "social.tsv", users)
        return cls(len(users), len(items), records, scale, adj, labels, users.raw, items.raw, ratios)


def read_kv(path) -> dict[str, str]:
    out = {}
    for lineno, line in _data_lines(path):
        if "\t" not in line:
            raise ParseError(f"{path}:{lineno}: expected key<TAB>value")
        k, v = line.split("\t", 1)
        out[k] = v
    return out


def build_sequences(dataset: Dataset) -> tuple[list[History], list[History]]:
    """Per-user and per-item training histories, ascending in time."""
    user_events, item_events = [], []
    for k in chronological_order(dataset.interactions):
        if dataset.split[k] != TRAIN:
            continue
        r = dataset.interactions[k]
        ridx = dataset.rating_index(r.rating)
        user_events.append((r.user, r.item, ridx, r.timestamp))
        item_events.append((r.item, r.user, ridx, r.timestamp))
    return _histories(dataset.n_users, user_events), _histories(dataset.n_items, item_events)


def build_rating_matrix(dataset: Dataset) -> SparseRatingMatrix:
    """Training ratings only; when a (user, item) pair repeats, the latest one wins."""
    latest: dict[tuple[int, int], tuple[int, float]] = {}
    for k in chronological_order(dataset.interactions):
        if dataset.split[k] != TRAIN:
            continue
        r = dataset.interactions[k]
        latest[(r.user, r.item)] = (r.timestamp, float(r.rating))
    cols: list[list[tuple[int, float]]] = [[] for _ in range(dataset.n_items)]
    for (u, j), (_, val) in latest.items():
        cols[j].append((u, val))
    columns = []
    for c in cols:
        c.sort()
        columns.append((np.array([u for u, _ in c], dtype=np.int64), np.array([v for _, v in c], dtype=np.float64)))
    return SparseRatingMatrix(dataset.n_users, columns)


def load_raw(interactions_path, social_path, rating_scale=(1, 2, 3, 4, 5),
             ratios=(0.8, 0.1, 0.1), prune: bool = True) -> Dataset:
    """Parse both raw files and build a split, pruned :class:`Dataset`."""
    records, users, items = parse_interactions(interactions_path, rating_scale)
    adj = parse_social(social_path, users)
    scale = rating_scale if rating_scale is not None else sorted({r.rating for r in records})
    return Dataset.build(records, adj, scale, users.raw, items.raw, ratios, prune=prune)
