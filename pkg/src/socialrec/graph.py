"""Item-item cosine similarity graph and neighbor sampling."""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ParseError, SparseRatingMatrix


@dataclass
class CorrelativeGraph:
    k: int
    adj: list[list[tuple[int, float]]]

    def neighbors(self, j: int) -> list[int]:
        return [n for n, _ in self.adj[j]]

    def neighbor_lists(self) -> list[list[int]]:
        return [self.neighbors(j) for j in range(len(self.adj))]

    def export(self, path) -> None:
        """``item<TAB>neighbor<TAB>similarity`` lines sorted by (item, rank)."""
        with open(path, "w", encoding="utf-8") as fh:
            for j, row in enumerate(self.adj):
                for n, s in row:
                    fh.write(f"{j}\t{n}\t{s!r}\n")

    @classmethod
    def load(cls, path, n_items: int, k: int) -> "CorrelativeGraph":
        adj: list[list[tuple[int, float]]] = [[] for _ in range(n_items)]
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected item<TAB>neighbor<TAB>similarity")
            adj[int(parts[0])].append((int(parts[1]), float(parts[2])))
        return cls(k, adj)


def _dot_sorted(ua: np.ndarray, va: np.ndarray, ub: np.ndarray, vb: np.ndarray) -> float:
    # merge over two ascending user-id arrays
    total = 0.0
    a = b = 0
    na, nb = len(ua), len(ub)
    while a < na and b < nb:
        x, y = ua[a], ub[b]
        if x == y:
            total += va[a] * vb[b]
            a += 1
            b += 1
        elif x < y:
            a += 1
        else:
            b += 1
    return total


def cosine_similarity(matrix: SparseRatingMatrix, j: int, k: int) -> float:
    """Cosine of the angle between rating columns ``j`` and ``k``; 0 if either is empty."""
    uj, vj = matrix.columns[j]
    uk, vk = matrix.columns[k]
    sj = float(np.dot(vj, vj))
    sk = float(np.dot(vk, vk))
    if sj == 0.0 or sk == 0.0:
        return 0.0
    # one square root of the product keeps identical columns at exactly 1
    return min(1.0, float(_dot_sorted(uj, vj, uk, vk)) / math.sqrt(sj * sk))


def build_correlative_graph(matrix: SparseRatingMatrix, k: int = 100) -> CorrelativeGraph:
    """Top-``k`` positive-similarity neighbors per item, ties broken by smaller item id.

    Co-rated candidate pairs are found through the users' rows so only
    overlapping columns are ever compared. Ratings are integers, so dot
    products and squared norms are exact; candidates are ranked by the exact
    squared cosine, which keeps mathematically tied similarities tied no
    matter how the floating-point cosine rounds.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    m = matrix.n_items
    rows: list[list[int]] = [[] for _ in range(matrix.n_users)]
    for j, (users, _) in enumerate(matrix.columns):
        for u in users.tolist():
            rows[u].append(j)
    sq = [float(np.dot(v, v)) for _, v in matrix.columns]
    integral = all(np.all(v == np.rint(v)) for _, v in matrix.columns)
    adj = []
    for j in range(m):
        uj, vj = matrix.columns[j]
        scored = []
        for c in sorted({c for u in uj.tolist() for c in rows[u] if c != j}):
            uc, vc = matrix.columns[c]
            dot = _dot_sorted(uj, vj, uc, vc)
            if dot <= 0.0:
                continue
            sim = cosine_similarity(matrix, j, c)
            key = Fraction(int(dot) ** 2, int(sq[j]) * int(sq[c])) if integral else sim
            scored.append((-key, c, sim))
        scored.sort()
        adj.append([(c, sim) for _, c, sim in scored[:k]])
    return CorrelativeGraph(k, adj)


def sample_neighbors(adj: Sequence[int], s: int = 30, rng: np.random.Generator | None = None) -> list[int]:
    """All of ``adj`` when it fits in ``s``, else ``s`` distinct members drawn uniformly.

    Without an ``rng`` the first ``s`` entries are returned, which is the
    deterministic choice used at evaluation time.
    """
    if s < 1:
        raise ValueError(f"sample size must be >= 1, got {s}")
    if len(adj) <= s:
        return list(adj)
    if rng is None:
        return list(adj[:s])
    picks = rng.choice(len(adj), size=s, replace=False)
    return [adj[p] for p in picks]
