"""Dual dynamic/static social recommender network.

Users and items are both described by an *interactional* representation,
the Hadamard product of

* a dynamic part: the last hidden state of an LSTM run over the entity's
  chronologically ordered interaction embeddings, and
* a static part: an attention-weighted, transformed sum of the same
  interaction embeddings, scored against the entity's own embedding.

Users additionally attend over their sampled friends' interactional
representations, items over their correlative neighbors'. Both halves are
fused by a small perceptron and a three-layer head produces a rating (or a
click probability in ranking mode).

All computation is batched over *entities*: a ``(id, cutoff)`` pair standing
for one user or item restricted to training events strictly before
``cutoff``. Targets and their graph neighbors are deduplicated into one
entity table per side before any representation is computed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import Dataset, History
from .graph import CorrelativeGraph, sample_neighbors
from .tensor import Tensor

USER, ITEM = "user", "item"
RATING, RANKING = "rating", "ranking"
BLOCKS = ("uv", "vu", "uu", "vv")


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationConfig:
    use_lstm: bool = True
    use_att: bool = True
    use_social: bool = True
    use_correlative: bool = True

    def __post_init__(self):
        if not (self.use_lstm or self.use_att):
            raise ValueError("at least one of use_lstm/use_att must stay enabled")

    _NAMES = {
        "full": {},
        "w/o_LSTM": {"use_lstm": False},
        "w/o_ATT": {"use_att": False},
        "w/o_SN": {"use_social": False},
        "w/o_CN": {"use_correlative": False},
        "w/o_SC": {"use_social": False, "use_correlative": False},
    }

    @classmethod
    def from_name(cls, name: str) -> "AblationConfig":
        try:
            return cls(**cls._NAMES[name])
        except KeyError:
            raise ValueError(f"unknown ablation {name!r}; choose from {sorted(cls._NAMES)}") from None

    @property
    def name(self) -> str:
        for k, v in self._NAMES.items():
            if AblationConfig(**v) == self:
                return k
        return "custom"


# --------------------------------------------------------------------------
# parameter blocks
# --------------------------------------------------------------------------


def _uniform(rng: np.random.Generator, shape, bound: float) -> Tensor:
    return T.parameter(rng.uniform(-bound, bound, size=shape))


def _zeros(shape) -> Tensor:
    return T.parameter(np.zeros(shape))


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bound: float):
        self.W = _uniform(rng, (n_in, n_out), bound)
        self.b = _zeros(n_out)

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.W) + self.b

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}


class MLP:
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, bound: float):
        self.layers = [Linear(a, b, rng, bound) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1:
                x = T.relu(x)
        return x

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for k, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.{k}"))
        return out


class LSTM:
    """Stacked LSTM; gate column blocks are ordered input, forget, output, candidate."""

    def __init__(self, d: int, n_layers: int, rng: np.random.Generator, bound: float):
        self.d = d
        self.layers = []
        for _ in range(n_layers):
            b = np.zeros(4 * d)
            b[d:2 * d] = 1.0
            self.layers.append((_uniform(rng, (d, 4 * d), bound), _uniform(rng, (d, 4 * d), bound),
                                T.parameter(b)))

    def __call__(self, xs: Tensor, mask: np.ndarray) -> Tensor:
        """``xs``: [E, L, d]; ``mask``: [E, L] with padding first. Returns the final hidden state [E, d]."""
        E, L = mask.shape
        if L == 0:
            return Tensor(np.zeros((E, self.d)))
        seq = xs
        for W_ih, W_hh, b in self.layers:
            seq = T.lstm_scan(T.matmul(seq, W_ih) + b, W_hh, mask)  # [E, L, d]
        return seq[:, L - 1, :]

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for k, (W_ih, W_hh, b) in enumerate(self.layers):
            out.update({f"{prefix}.{k}.W_ih": W_ih, f"{prefix}.{k}.W_hh": W_hh, f"{prefix}.{k}.b": b})
        return out


def _stack_time(hs: list[Tensor]) -> Tensor:
    # [E, d] x L -> [E, L, d]
    E, d = hs[0].shape
    flat = T.concat(hs, axis=-1)  # [E, L*d]
    return T.reshape(flat, (E, len(hs), d))


class Attention:
    """Edge-aware attention: score = W2 . relu(W1 [center, x] + b1) + b2; out = relu(W0 sum(a x) + b0)."""

    def __init__(self, d: int, rng: np.random.Generator, bound: float):
        self.d = d
        self.W1 = _uniform(rng, (2 * d, d), bound)
        self.b1 = _zeros(d)
        self.W2 = _uniform(rng, (d, 1), bound)
        self.b2 = _zeros(1)
        self.W0 = _uniform(rng, (d, d), bound)
        self.b0 = _zeros(d)

    def __call__(self, center: Tensor, xs: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """``center`` [E, d], ``xs`` [E, N, d], ``mask`` [E, N] -> ([E, d], weights [E, N])."""
        E, N = mask.shape
        d = self.d
        # W1 [c, x] split into its two row blocks so the center is not tiled N times
        c_part = T.reshape(T.matmul(center, self.W1[:d]), (E, 1, d))
        hidden = T.relu(c_part + T.matmul(xs, self.W1[d:]) + self.b1)
        scores = T.reshape(T.matmul(hidden, self.W2), (E, N)) + self.b2
        alpha = T.softmax(scores, mask)
        pooled = T.tensor_sum(T.reshape(alpha, (E, N, 1)) * xs, axis=1)
        out = T.relu(T.matmul(pooled, self.W0) + self.b0)
        has_any = mask.any(axis=1, keepdims=True)
        if not has_any.all():
            out = out * Tensor(has_any.astype(np.float64))
        return out, alpha.data

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W1": self.W1, f"{prefix}.b1": self.b1, f"{prefix}.W2": self.W2,
                f"{prefix}.b2": self.b2, f"{prefix}.W0": self.W0, f"{prefix}.b0": self.b0}


class ModelParams:
    """Every learnable tensor of the network."""

    def __init__(self, n_users: int, n_items: int, n_ratings: int, d: int = 128,
                 lstm_layers: int = 1, seed: int = 0):
        self.n_users, self.n_items, self.n_ratings = n_users, n_items, n_ratings
        self.d, self.lstm_layers, self.seed = d, lstm_layers, seed
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(d)
        self.P = _uniform(rng, (n_users, d), bound)
        self.Q = _uniform(rng, (n_items, d), bound)
        self.E = _uniform(rng, (n_ratings, d), bound)
        self.mlp_uv = MLP([2 * d, d, d], rng, bound)
        self.mlp_vu = MLP([2 * d, d, d], rng, bound)
        self.lstm_u = LSTM(d, lstm_layers, rng, bound)
        self.lstm_v = LSTM(d, lstm_layers, rng, bound)
        self.att_uv = Attention(d, rng, bound)
        self.att_vu = Attention(d, rng, bound)
        self.att_uu = Attention(d, rng, bound)
        self.att_vv = Attention(d, rng, bound)
        self.mlp_u = MLP([2 * d, d, d], rng, bound)
        self.mlp_v = MLP([2 * d, d, d], rng, bound)
        self.head = MLP([2 * d, d, max(1, d // 2), 1], rng, bound)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"P": self.P, "Q": self.Q, "E": self.E}
        for name in ("mlp_uv", "mlp_vu", "lstm_u", "lstm_v", "att_uv", "att_vu", "att_uu",
                     "att_vv", "mlp_u", "mlp_v", "head"):
            out.update(getattr(self, name).params(name))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        T.zero_grad(self.parameters())

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.named_parameters().items():
            if state[k].shape != p.shape:
                raise T.DimensionError(f"{k}: stored shape {state[k].shape} != {p.shape}")
            p.data[...] = state[k]

    def fill(self, value: float = 0.0) -> None:
        for p in self.parameters():
            p.data[...] = value


def save_checkpoint(path, params: ModelParams, meta: dict) -> None:
    """One ``.npz`` archive: a JSON ``__meta__`` entry plus one array per parameter."""
    full = {"d": params.d, "lstm_layers": params.lstm_layers, "n_users": params.n_users,
            "n_items": params.n_items, "n_ratings": params.n_ratings, **meta}
    arrays = {k: v.data for k, v in params.named_parameters().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(full, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        params = ModelParams(meta["n_users"], meta["n_items"], meta["n_ratings"], meta["d"],
                             meta["lstm_layers"], meta.get("seed", 0))
        params.load_state({k: z[k] for k in z.files if k != "__meta__"})
    return params, meta


# --------------------------------------------------------------------------
# single-entity operations (thin wrappers over the batched blocks)
# --------------------------------------------------------------------------


def _row(x) -> Tensor:
    x = T.as_tensor(x)
    return T.reshape(x, (1,) + x.shape)


def _unrow(x: Tensor) -> Tensor:
    return T.reshape(x, x.shape[1:])


def interaction_embedding(side: str, rating_idx, counterpart_id, params: ModelParams) -> Tensor:
    """User side: ``mlp_uv([e_r, q_j])``; item side: ``mlp_vu([e_r, p_i])``.

    Scalar indices give a [d] vector, index arrays give [..., d].
    """
    rating_idx = np.asarray(rating_idx)
    counterpart_id = np.asarray(counterpart_id)
    if side == USER:
        table, mlp, n = params.Q, params.mlp_uv, params.n_items
    elif side == ITEM:
        table, mlp, n = params.P, params.mlp_vu, params.n_users
    else:
        raise ValueError(f"side must be 'user' or 'item', got {side!r}")
    if np.any(rating_idx < 0) or np.any(rating_idx >= params.n_ratings):
        raise IndexError(f"rating index out of range [0, {params.n_ratings})")
    if np.any(counterpart_id < 0) or np.any(counterpart_id >= n):
        raise IndexError(f"counterpart id out of range [0, {n})")
    return mlp(T.concat([params.E[rating_idx], table[counterpart_id]]))


def dynamic_rep(sequence, lstm: LSTM) -> Tensor:
    """Final LSTM hidden state over a [L, d] sequence (a list of [d] tensors also works)."""
    if isinstance(sequence, (list, tuple)):
        if not sequence:
            return Tensor(np.zeros(lstm.d))
        sequence = _stack_time([_row(s) for s in sequence])
    else:
        sequence = _row(sequence)
    L = sequence.shape[1]
    if L == 0:
        return Tensor(np.zeros(lstm.d))
    return _unrow(lstm(sequence, np.ones((1, L), bool)))


def _attend_single(center, edges, att: Attention) -> tuple[Tensor, np.ndarray]:
    if isinstance(edges, (list, tuple)):
        if not edges:
            return Tensor(np.zeros(att.d)), np.zeros(0)
        edges = _stack_time([_row(e) for e in edges])
    else:
        edges = _row(edges)
    n = edges.shape[1]
    if n == 0:
        return Tensor(np.zeros(att.d)), np.zeros(0)
    out, w = att(_row(center), edges, np.ones((1, n), bool))
    return _unrow(out), w[0]


def static_rep(center, edges, att: Attention) -> Tensor:
    """Attention pooling of edge representations around ``center``; zeros when there are none."""
    return _attend_single(center, edges, att)[0]


def interactional_rep(dynamic, static, ablation: AblationConfig = AblationConfig()) -> Tensor:
    """Hadamard fusion; with one pathway ablated the other passes through unchanged."""
    if not ablation.use_lstm:
        return T.as_tensor(static)
    if not ablation.use_att:
        return T.as_tensor(dynamic)
    if T.as_tensor(dynamic).shape != T.as_tensor(static).shape:
        _shape_error(dynamic, static)
    return T.mul(dynamic, static)


def _shape_error(a, b):
    raise T.DimensionError(f"shapes {T.as_tensor(a).shape} and {T.as_tensor(b).shape} differ")


def relational_agg(side: str, center, neighbors, params: ModelParams,
                   ablation: AblationConfig = AblationConfig()) -> Tensor:
    """Attention over neighbors' interactional reps; zeros when the side is disabled or empty."""
    if side == USER:
        att, on = params.att_uu, ablation.use_social
    elif side == ITEM:
        att, on = params.att_vv, ablation.use_correlative
    else:
        raise ValueError(f"side must be 'user' or 'item', got {side!r}")
    if not on:
        return Tensor(np.zeros(params.d))
    return static_rep(center, neighbors, att)


def latent_factor(side: str, interactional, relational, params: ModelParams) -> Tensor:
    a, b = T.as_tensor(interactional), T.as_tensor(relational)
    if a.shape != b.shape:
        _shape_error(a, b)
    mlp = params.mlp_u if side == USER else params.mlp_v
    return mlp(T.concat([a, b]))


def predict(h_u, h_v, params: ModelParams, mode: str = RATING) -> Tensor:
    """Head output: raw rating in rating mode, sigmoid probability in ranking mode."""
    a, b = T.as_tensor(h_u), T.as_tensor(h_v)
    if a.shape != b.shape:
        _shape_error(a, b)
    out = params.head(T.concat([a, b]))
    out = T.reshape(out, out.shape[:-1])
    return T.sigmoid(out) if mode == RANKING else out


# --------------------------------------------------------------------------
# batched forward pass
# --------------------------------------------------------------------------


@dataclass
class AttentionTrace:
    """``blocks[block]`` is a list of ``(target_id, [(neighbor_id, weight), ...])``."""

    blocks: dict[str, list[tuple[int, list[tuple[int, float]]]]] = field(
        default_factory=lambda: {b: [] for b in BLOCKS})

    def add(self, block: str, target: int, neighbors: Sequence[int], weights: Sequence[float]) -> None:
        if len(neighbors):
            self.blocks[block].append((int(target), [(int(n), float(w)) for n, w in zip(neighbors, weights)]))

    def groups(self):
        for block in BLOCKS:
            for target, pairs in self.blocks[block]:
                yield block, target, pairs


def export_attention(trace: AttentionTrace, path) -> None:
    """Write ``block<TAB>target<TAB>neighbor<TAB>weight`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for block, target, pairs in trace.groups():
            for n, w in pairs:
                fh.write(f"{block}\t{target}\t{n}\t{w!r}\n")


def read_attention(path) -> dict[tuple[str, int], list[tuple[int, float]]]:
    out: dict[tuple[str, int], list[tuple[int, float]]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            b, t, n, w = line.split("\t")
            out.setdefault((b, int(t)), []).append((int(n), float(w)))
    return out


@dataclass
class Graphs:
    """Relational structure consumed by :func:`forward`."""

    social: list[list[int]]
    correlative: list[list[int]]

    @classmethod
    def from_dataset(cls, dataset: Dataset, corr: CorrelativeGraph | None) -> "Graphs":
        corr_lists = corr.neighbor_lists() if corr is not None else [[] for _ in range(dataset.n_items)]
        return cls(dataset.social_adj, corr_lists)


@dataclass
class ForwardOutput:
    predictions: Tensor
    trace: AttentionTrace | None = None


class _EntityTable:
    """Deduplicated (id, cutoff) pairs for one side of a batch."""

    def __init__(self):
        self.index: dict[tuple[int, float], int] = {}
        self.ids: list[int] = []
        self.cutoffs: list[float] = []

    def row(self, entity: int, cutoff: float) -> int:
        key = (int(entity), float(cutoff))
        r = self.index.get(key)
        if r is None:
            r = self.index[key] = len(self.ids)
            self.ids.append(int(entity))
            self.cutoffs.append(float(cutoff))
        return r


def _pack(histories: Sequence[History], ids, cutoffs, max_len: int):
    """Right-aligned chronological windows plus a canonical (counterpart, rating) ordering."""
    E = len(ids)
    windows = [histories[i].before(t, max_len) for i, t in zip(ids, cutoffs)]
    L = max(1, max((w.stop - w.start for w in windows), default=0))
    cp = np.zeros((E, L), np.int64)
    rt = np.zeros((E, L), np.int64)
    mask = np.zeros((E, L), bool)
    perm = np.zeros((E, L), np.int64)
    canon_mask = np.zeros((E, L), bool)
    for e, (i, w) in enumerate(zip(ids, windows)):
        n = w.stop - w.start
        if n == 0:
            continue
        h = histories[i]
        cp[e, L - n:] = h.counterparts[w]
        rt[e, L - n:] = h.rating_idx[w]
        mask[e, L - n:] = True
        order = np.lexsort((rt[e, L - n:], cp[e, L - n:]))
        perm[e, :n] = L - n + order
        canon_mask[e, :n] = True
    return cp, rt, mask, perm, canon_mask


class Network:
    """Binds parameters, data and graphs; :meth:`forward` scores batches of (user, item, cutoff)."""

    def __init__(self, params: ModelParams, dataset: Dataset, graphs: Graphs,
                 ablation: AblationConfig = AblationConfig(), mode: str = RATING,
                 max_seq_len: int = 30, neighbor_sample: int = 30, dropout_rate: float = 0.0):
        if mode not in (RATING, RANKING):
            raise ValueError(f"mode must be rating or ranking, got {mode!r}")
        self.params, self.dataset, self.graphs = params, dataset, graphs
        self.ablation, self.mode = ablation, mode
        self.max_seq_len, self.neighbor_sample = max_seq_len, neighbor_sample
        self.dropout_rate = dropout_rate

    # representations ---------------------------------------------------------

    def interactional(self, side: str, ids, cutoffs, trace_rows=None, trace: AttentionTrace | None = None) -> Tensor:
        """Interactional representation [E, d] for each (id, cutoff) entity of ``side``."""
        p, ab = self.params, self.ablation
        if side == USER:
            hist, center_tab, lstm, att, block = self.dataset.user_seqs, p.P, p.lstm_u, p.att_uv, "uv"
        else:
            hist, center_tab, lstm, att, block = self.dataset.item_seqs, p.Q, p.lstm_v, p.att_vu, "vu"
        cp, rt, mask, perm, canon_mask = _pack(hist, ids, cutoffs, self.max_seq_len)
        E, L = mask.shape
        x = interaction_embedding(side, rt, cp, p)  # [E, L, d]
        dyn = lstm(x, mask) if ab.use_lstm else None
        stat = None
        if ab.use_att:
            rows = np.arange(E)[:, None]
            x_c = x[rows, perm]
            stat, w = att(center_tab[np.asarray(ids)], x_c, canon_mask)
            if trace is not None and trace_rows is not None:
                for r in trace_rows:
                    n = int(canon_mask[r].sum())
                    trace.add(block, ids[r], cp[r, perm[r, :n]], w[r, :n])
        return interactional_rep(dyn, stat, ab)

    def _neighbors(self, adj: Sequence[int], rng) -> list[int]:
        return sorted(sample_neighbors(adj, self.neighbor_sample, rng))

    def forward(self, users, items, cutoffs, training: bool = False,
                rng: np.random.Generator | None = None, trace: bool = False) -> ForwardOutput:
        users = np.asarray(users, np.int64)
        items = np.asarray(items, np.int64)
        cutoffs = np.broadcast_to(np.asarray(cutoffs, np.float64), users.shape)
        if np.any((users < 0) | (users >= self.params.n_users)) or np.any((items < 0) | (items >= self.params.n_items)):
            raise IndexError(f"ids out of range: users in [0, {self.params.n_users}), "
                             f"items in [0, {self.params.n_items})")
        if training and rng is None:
            raise ValueError("training forward needs a random generator")
        p, ab = self.params, self.ablation
        B = len(users)
        sample_rng = rng if training else None

        ut, it = _EntityTable(), _EntityTable()
        u_rows = [ut.row(u, t) for u, t in zip(users, cutoffs)]
        v_rows = [it.row(v, t) for v, t in zip(items, cutoffs)]
        social = [self._neighbors(self.graphs.social[u], sample_rng) if ab.use_social else []
                  for u in users]
        corr = [self._neighbors(self.graphs.correlative[v], sample_rng) if ab.use_correlative else []
                for v in items]
        s_rows = [[ut.row(o, t) for o in nb] for nb, t in zip(social, cutoffs)]
        c_rows = [[it.row(k, t) for k in nb] for nb, t in zip(corr, cutoffs)]

        tr = AttentionTrace() if trace else None
        h_users = self.interactional(USER, ut.ids, ut.cutoffs, sorted(set(u_rows)), tr)
        h_items = self.interactional(ITEM, it.ids, it.cutoffs, sorted(set(v_rows)), tr)

        h_i = T.dropout(h_users[np.asarray(u_rows)], self.dropout_rate, training, rng)
        h_a = T.dropout(h_items[np.asarray(v_rows)], self.dropout_rate, training, rng)
        h_un = self._relational(h_users, s_rows, p.P[users], p.att_uu, ab.use_social, users, social, "uu", tr)
        h_vn = self._relational(h_items, c_rows, p.Q[items], p.att_vv, ab.use_correlative, items, corr, "vv", tr)
        h_un = T.dropout(h_un, self.dropout_rate, training, rng)
        h_vn = T.dropout(h_vn, self.dropout_rate, training, rng)

        h_u = p.mlp_u(T.concat([h_i, h_un]))
        h_v = p.mlp_v(T.concat([h_a, h_vn]))
        out = predict(h_u, h_v, p, self.mode)
        assert out.shape == (B,)
        return ForwardOutput(out, tr)

    def _relational(self, reps: Tensor, rows: list[list[int]], centers: Tensor, att: Attention,
                    enabled: bool, targets, neighbor_ids, block: str, trace) -> Tensor:
        B = len(rows)
        S = max((len(r) for r in rows), default=0)
        if not enabled or S == 0:
            return Tensor(np.zeros((B, self.params.d)))
        idx = np.zeros((B, S), np.int64)
        mask = np.zeros((B, S), bool)
        for b, r in enumerate(rows):
            idx[b, :len(r)] = r
            mask[b, :len(r)] = True
        out, w = att(centers, reps[idx], mask)
        if trace is not None:
            seen = set()
            for b, t in enumerate(targets):
                if int(t) not in seen:
                    seen.add(int(t))
                    trace.add(block, t, neighbor_ids[b], w[b, :len(rows[b])])
        return out

    def predict_values(self, users, items, cutoffs, batch_size: int = 256) -> np.ndarray:
        """Eval-mode predictions as a plain array, batched."""
        out = []
        users, items = np.asarray(users), np.asarray(items)
        cutoffs = np.broadcast_to(np.asarray(cutoffs, np.float64), users.shape)
        for s in range(0, len(users), batch_size):
            sl = slice(s, s + batch_size)
            out.append(self.forward(users[sl], items[sl], cutoffs[sl]).predictions.data)
        return np.concatenate(out) if out else np.zeros(0)

