"""Losses, metrics, the training loop with early stopping, and evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import TEST, TRAIN, VAL, Dataset
from .graph import CorrelativeGraph
from .model import RANKING, RATING, AblationConfig, Graphs, ModelParams, Network
from .optim import RMSprop
from .tensor import DomainError, Tensor

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    mode: str = RATING
    d: int = 128
    batch_size: int = 256
    learning_rate: float = 0.001
    max_seq_len: int = 30
    neighbor_sample: int = 30
    corr_k: int = 100
    dropout_rate: float | None = None
    epochs: int = 50
    patience: int = 5
    seed: int = 0
    ablation: AblationConfig = field(default_factory=AblationConfig)
    eval_K: tuple[int, ...] = (10, 20)
    n_negatives: int = 100
    lstm_layers: int = 1

    def __post_init__(self):
        if self.mode not in (RATING, RANKING):
            raise ValueError(f"mode must be 'rating' or 'ranking', got {self.mode!r}")
        if self.dropout_rate is None:
            self.dropout_rate = 0.5 if self.mode == RATING else 0.4
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        for name in ("d", "batch_size", "max_seq_len", "neighbor_sample", "corr_k", "epochs",
                     "patience", "n_negatives", "lstm_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        self.eval_K = tuple(int(k) for k in self.eval_K)

    def as_items(self) -> list[tuple[str, str]]:
        """Flat (key, value) pairs; the ablation expands into its four flags."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "ablation":
                out.append(("ablation", v.name))
                out.extend((k, str(getattr(v, k))) for k in ("use_lstm", "use_att", "use_social", "use_correlative"))
            elif f.name == "eval_K":
                out.append((f.name, ",".join(map(str, v))))
            else:
                out.append((f.name, repr(v) if isinstance(v, float) else str(v)))
        return out


@dataclass
class EvalReport:
    metrics: dict[str, float] = field(default_factory=dict)
    loss_curve: list[tuple[int, float, float]] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    skipped: int = 0
    header: dict[str, str] = field(default_factory=dict)

    def write(self, directory, name: str = "report.tsv") -> None:
        d = Path(directory)
        lines = [f"# {k}\t{v}\n" for k, v in self.header.items()]
        lines += [f"{k}\t{v!r}\n" for k, v in self.metrics.items()]
        lines.append(f"skipped_events\t{self.skipped}\n")
        (d / name).write_text("".join(lines), encoding="utf-8")
        if self.loss_curve:
            (d / "loss_curve.tsv").write_text(
                "".join(f"{e}\t{l!r}\t{m!r}\n" for e, l, m in self.loss_curve), encoding="utf-8")


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def mse_loss(predictions, targets) -> Tensor:
    """``sum((p - r)**2) / (2N)``."""
    p = T.as_tensor(predictions)
    r = T.as_tensor(targets)
    if p.size == 0 or p.shape != r.shape:
        raise DomainError(f"mse_loss needs equal non-empty shapes, got {p.shape} and {r.shape}")
    diff = p - r
    return T.mul(T.tensor_sum(diff * diff), 1.0 / (2 * p.size))


def bce_loss(probabilities, labels, eps: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to ``[eps, 1-eps]``."""
    p = T.as_tensor(probabilities)
    y = T.as_tensor(labels)
    if p.size == 0 or p.shape != y.shape:
        raise DomainError(f"bce_loss needs equal non-empty shapes, got {p.shape} and {y.shape}")
    p = T.clip(p, eps, 1.0 - eps)
    ll = y * T.log(p) + (1.0 - y) * T.log(1.0 - p)
    return T.mul(T.tensor_sum(ll), -1.0 / p.size)


# --------------------------------------------------------------------------
# metrics (plain numpy)
# --------------------------------------------------------------------------


def rmse_mae(predictions, targets) -> tuple[float, float]:
    e = np.asarray(predictions, np.float64) - np.asarray(targets, np.float64)
    if e.size == 0:
        raise DomainError("cannot score an empty prediction set")
    return float(np.sqrt(np.mean(e * e))), float(np.mean(np.abs(e)))


def target_rank(scores, candidates, target: int) -> int:
    """1-based rank of ``target``; higher score first, equal scores by ascending id."""
    scores = np.asarray(scores, np.float64)
    candidates = np.asarray(candidates)
    t = int(np.flatnonzero(candidates == target)[0])
    s = scores[t]
    better = (scores > s) | ((scores == s) & (candidates < target))
    return int(better.sum()) + 1


def ranking_metrics(ranks: Sequence[int], Ks: Sequence[int]) -> dict[str, float]:
    """MRR@K and NDCG@K with one relevant item per event."""
    r = np.asarray(ranks, np.float64)
    if r.size == 0:
        raise DomainError("cannot score an empty ranking set")
    out = {}
    for K in Ks:
        hit = r <= K
        out[f"MRR@{K}"] = float(np.mean(np.where(hit, 1.0 / r, 0.0)))
        out[f"NDCG@{K}"] = float(np.mean(np.where(hit, 1.0 / np.log2(r + 1.0), 0.0)))
    return out


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


def _split_targets(dataset: Dataset, split: str):
    recs = dataset.records_in(split)
    users = np.array([r.user for r in recs], np.int64)
    items = np.array([r.item for r in recs], np.int64)
    taus = np.array([r.timestamp for r in recs], np.float64)
    ratings = np.array([r.rating for r in recs], np.float64)
    return users, items, taus, ratings


def _sample_unseen(dataset: Dataset, user: int, n: int, rng: np.random.Generator) -> np.ndarray:
    seen = dataset.user_items(user)
    pool = np.array([j for j in range(dataset.n_items) if j not in seen], np.int64)
    if pool.size <= n:
        return pool
    return np.sort(rng.choice(pool, size=n, replace=False))


def _batches(n: int, batch_size: int, paired: bool, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches covering ``range(n)``.

    With ``paired`` the first and second halves of the range are positives and
    their sampled negatives; each positive travels with its own negative so
    every batch has balanced labels.
    """
    if not paired:
        order = rng.permutation(n)
        return [order[s:s + batch_size] for s in range(0, n, batch_size)]
    half = n // 2
    order = rng.permutation(half)
    step = max(1, batch_size // 2)
    return [np.concatenate([chunk, chunk + half]) for chunk in
            (order[s:s + step] for s in range(0, half, step))]


def build_network(params: ModelParams, dataset: Dataset, corr: CorrelativeGraph | None,
                  config: TrainConfig) -> Network:
    return Network(params, dataset, Graphs.from_dataset(dataset, corr), config.ablation, config.mode,
                   config.max_seq_len, config.neighbor_sample, config.dropout_rate)


def evaluate_rating(net: Network, dataset: Dataset, split: str = TEST,
                    batch_size: int = 256) -> tuple[float, float]:
    """RMSE and MAE of scale-clamped predictions on ``split``."""
    users, items, taus, ratings = _split_targets(dataset, split)
    if users.size == 0:
        raise DomainError(f"split {split!r} is empty")
    pred = net.predict_values(users, items, taus, batch_size)
    pred = np.clip(pred, min(dataset.rating_scale), max(dataset.rating_scale))
    return rmse_mae(pred, ratings)


def evaluate_ranking(net: Network, dataset: Dataset, split: str = TEST, Ks: Sequence[int] = (10, 20),
                     n_negatives: int = 100, rng: np.random.Generator | None = None,
                     batch_size: int = 256) -> tuple[dict[str, float], int]:
    """MRR@K/NDCG@K against ``n_negatives`` never-interacted items per event.

    Returns ``(metrics, skipped)`` where ``skipped`` counts events whose user
    has no unseen item to sample.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    users, items, taus, _ = _split_targets(dataset, split)
    if users.size == 0:
        raise DomainError(f"split {split!r} is empty")
    cand_u, cand_v, cand_t, spans = [], [], [], []
    skipped = 0
    for u, v, t in zip(users, items, taus):
        neg = _sample_unseen(dataset, int(u), n_negatives, rng)
        if neg.size == 0:
            skipped += 1
            continue
        cands = np.concatenate([[v], neg])
        spans.append((len(cand_v), len(cands), int(v)))
        cand_u.extend([u] * len(cands))
        cand_v.extend(cands.tolist())
        cand_t.extend([t] * len(cands))
    if not spans:
        raise DomainError(f"no scorable event in split {split!r}")
    scores = net.predict_values(np.array(cand_u), np.array(cand_v), np.array(cand_t), batch_size)
    cand_v = np.array(cand_v)
    ranks = [target_rank(scores[s:s + n], cand_v[s:s + n], v) for s, n, v in spans]
    if skipped:
        log.warning("skipped %d events with no unseen candidate items", skipped)
    return ranking_metrics(ranks, Ks), skipped


def _validate(net: Network, dataset: Dataset, config: TrainConfig) -> tuple[float, dict[str, float], int]:
    """Early-stopping score (higher is better) plus the full metric dict."""
    if config.mode == RATING:
        rmse, mae = evaluate_rating(net, dataset, VAL, config.batch_size)
        return -rmse, {"RMSE": rmse, "MAE": mae}, 0
    m, skipped = evaluate_ranking(net, dataset, VAL, config.eval_K, config.n_negatives,
                                  np.random.default_rng(config.seed), config.batch_size)
    key = "NDCG@10" if 10 in config.eval_K else f"NDCG@{config.eval_K[0]}"
    return m[key], m, skipped


def train(dataset: Dataset, corr: CorrelativeGraph | None, config: TrainConfig,
          params: ModelParams | None = None, validate: bool = True) -> tuple[ModelParams, EvalReport]:
    """Shuffle, batch, step with RMSprop, validate each epoch and keep the best state.

    Stops after ``config.patience`` consecutive epochs without strict
    validation improvement. With ``validate=False`` every epoch runs and the
    final parameters are returned.
    """
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = ModelParams(dataset.n_users, dataset.n_items, len(dataset.rating_scale), config.d,
                             config.lstm_layers, config.seed)
    net = build_network(params, dataset, corr, config)
    opt = RMSprop(params.parameters(), lr=config.learning_rate)
    users, items, taus, ratings = _split_targets(dataset, TRAIN)
    if users.size == 0:
        raise DomainError("no training interactions")

    report = EvalReport()
    best_score, best_state, bad_epochs = -math.inf, params.state(), 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        if config.mode == RANKING:
            negs = np.array([_sample_unseen(dataset, int(u), 1, rng)[:1].tolist() or [v]
                             for u, v in zip(users, items)], np.int64).reshape(-1)
            ep_u = np.concatenate([users, users])
            ep_v = np.concatenate([items, negs])
            ep_t = np.concatenate([taus, taus])
            ep_y = np.concatenate([np.ones(users.size), np.zeros(users.size)])
        else:
            ep_u, ep_v, ep_t, ep_y = users, items, taus, ratings
        batches = _batches(ep_u.size, config.batch_size, config.mode == RANKING, rng)
        total = 0.0
        for b, idx in enumerate(batches, 1):
            out = net.forward(ep_u[idx], ep_v[idx], ep_t[idx], training=True, rng=rng).predictions
            loss = mse_loss(out, ep_y[idx]) if config.mode == RATING else bce_loss(out, ep_y[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            total += value * idx.size
        train_loss = total / ep_u.size
        if validate:
            score, metrics, _ = _validate(net, dataset, config)
            val_metric = -score if config.mode == RATING else score
        else:
            score, val_metric = -train_loss, train_loss
        report.loss_curve.append((epoch, train_loss, val_metric))
        report.epoch_seconds.append(time.perf_counter() - start)
        log.info("epoch %d loss %.6f val %.6f", epoch, train_loss, val_metric)
        if score > best_score:
            best_score, best_state, bad_epochs = score, params.state(), 0
        else:
            bad_epochs += 1
            if validate and bad_epochs >= config.patience:
                break
    if validate:
        params.load_state(best_state)
    return params, report


def evaluate(net: Network, dataset: Dataset, config: TrainConfig, split: str = TEST) -> EvalReport:
    """Metrics for ``split`` in the network's mode, with the protocol recorded in the header."""
    report = EvalReport(header={"mode": config.mode, "split": split})
    if config.mode == RATING:
        rmse, mae = evaluate_rating(net, dataset, split, config.batch_size)
        report.metrics = {"RMSE": rmse, "MAE": mae}
    else:
        report.header["candidates"] = f"1 positive + {config.n_negatives} uniform never-interacted negatives"
        report.header["ties"] = "ascending item id"
        report.metrics, report.skipped = evaluate_ranking(
            net, dataset, split, config.eval_K, config.n_negatives,
            np.random.default_rng(config.seed), config.batch_size)
    return report

