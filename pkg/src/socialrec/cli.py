"""Command-line front end: ``prepare``, ``train``, ``evaluate``, ``export-attention``.

Exit codes: 0 success, 1 validation or parse error, 2 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .data import TEST, VAL, Dataset, ParseError, ValidationError, build_rating_matrix, load_raw, read_kv
from .graph import CorrelativeGraph, build_correlative_graph
from .model import AblationConfig, export_attention, load_checkpoint, save_checkpoint
from .train import DivergenceError, EvalReport, TrainConfig, build_network, evaluate, train

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2

log = logging.getLogger("socialrec")


class CliError(Exception):
    """Reported to the user with exit code 1."""


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------

_EXTRA = ("interactions_path", "social_path", "workdir", "rating_scale")
_FLAGS = ("use_lstm", "use_att", "use_social", "use_correlative")


def _parse_bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise CliError(f"not a boolean: {v!r}")


@dataclass
class RunConfig:
    train: TrainConfig
    interactions_path: str | None = None
    social_path: str | None = None
    workdir: str = "."
    rating_scale: str = "1,2,3,4,5"

    def items(self) -> list[tuple[str, str]]:
        out = [("interactions_path", str(self.interactions_path or "")),
               ("social_path", str(self.social_path or "")),
               ("workdir", str(self.workdir)), ("rating_scale", self.rating_scale)]
        return out + [(k, v.lower() if v in ("True", "False") else v) for k, v in self.train.as_items()]

    def write(self, path) -> None:
        Path(path).write_text("".join(f"{k}\t{v}\n" for k, v in self.items()), encoding="utf-8")


def build_run_config(values: dict[str, str]) -> RunConfig:
    """Turn string key/values (file then flags, later wins) into a typed config."""
    kw = {}
    ablation = AblationConfig.from_name(values.get("ablation", "full"))
    flags = {k: getattr(ablation, k) for k in _FLAGS}
    for k in _FLAGS:
        if k in values:
            flags[k] = _parse_bool(values[k])
    try:
        ablation = AblationConfig(**flags)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    for f in fields(TrainConfig):
        if f.name == "ablation" or f.name not in values:
            continue
        raw = values[f.name]
        default = TrainConfig.__dataclass_fields__[f.name].default
        try:
            if f.name == "eval_K":
                kw[f.name] = tuple(int(x) for x in raw.split(",") if x)
            elif f.name == "dropout_rate":
                kw[f.name] = None if raw in ("", "None") else float(raw)
            elif isinstance(default, bool):
                kw[f.name] = _parse_bool(raw)
            elif isinstance(default, int):
                kw[f.name] = int(raw)
            elif isinstance(default, float):
                kw[f.name] = float(raw)
            else:
                kw[f.name] = raw
        except ValueError:
            raise CliError(f"bad value for {f.name}: {raw!r}") from None
    try:
        tc = TrainConfig(ablation=ablation, **kw)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    return RunConfig(tc, values.get("interactions_path") or None, values.get("social_path") or None,
                     values.get("workdir", "."), values.get("rating_scale", "1,2,3,4,5"))


def _known_keys() -> list[str]:
    return [f.name for f in fields(TrainConfig)] + list(_EXTRA) + list(_FLAGS)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


@contextmanager
def workdir_lock(workdir: Path):
    lock = workdir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliError(f"{workdir} is locked by another command (remove {lock} if stale)") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _load_prepared(workdir: Path, cfg: TrainConfig) -> tuple[Dataset, CorrelativeGraph]:
    needed = ["meta", "interactions.tsv", "social.tsv", "users.map", "items.map", "corr_graph.tsv"]
    missing = [n for n in needed if not (workdir / n).exists()]
    if missing:
        raise CliError(f"{workdir} is not a prepared workdir (missing {', '.join(missing)}); "
                       f"run `socialrec prepare` first")
    ds = Dataset.load(workdir)
    return ds, CorrelativeGraph.load(workdir / "corr_graph.tsv", ds.n_items, cfg.corr_k)


def _parse_scale(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise CliError(f"bad rating_scale {text!r}") from None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_prepare(run: RunConfig, force: bool = False) -> int:
    wd = Path(run.workdir)
    if not run.interactions_path or not run.social_path:
        raise CliError("prepare needs --interactions_path and --social_path")
    if wd.exists() and any(wd.iterdir()) and not force:
        raise CliError(f"workdir {wd} is not empty; pass --force to overwrite")
    wd.mkdir(parents=True, exist_ok=True)
    with workdir_lock(wd):
        ds = load_raw(run.interactions_path, run.social_path, _parse_scale(run.rating_scale))
        graph = build_correlative_graph(build_rating_matrix(ds), run.train.corr_k)
        ds.export(wd)
        graph.export(wd / "corr_graph.tsv")
    print(f"# Users\t{ds.n_users}")
    print(f"# Items\t{ds.n_items}")
    print(f"# Events\t{len(ds.interactions)}")
    print(f"# Social links\t{ds.n_social_links()}")
    return EXIT_OK


def cmd_train(run: RunConfig) -> int:
    wd = Path(run.workdir)
    cfg = run.train
    ds, graph = _load_prepared(wd, cfg)
    with workdir_lock(wd):
        run.write(wd / "effective_config.tsv")
        try:
            params, report = train(ds, graph, cfg)
        except DivergenceError as exc:
            print(f"diverged: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        save_checkpoint(wd / "best.ckpt", params, {"mode": cfg.mode, "seed": cfg.seed,
                                                  "rating_scale": list(ds.rating_scale),
                                                  "ablation": cfg.ablation.name})
        final = evaluate(build_network(params, ds, graph, cfg), ds, cfg, TEST)
        final.loss_curve = report.loss_curve
        final.write(wd)
        (wd / "timing.tsv").write_text(
            "".join(f"{e}\t{s:.3f}\n" for (e, _, _), s in zip(report.loss_curve, report.epoch_seconds)),
            encoding="utf-8")
    for k, v in final.metrics.items():
        print(f"{k}\t{v:.6f}")
    return EXIT_OK


def cmd_evaluate(run: RunConfig, checkpoint: str | None, split: str, mode_given: bool) -> int:
    wd = Path(run.workdir)
    ckpt = Path(checkpoint) if checkpoint else wd / "best.ckpt"
    if not ckpt.exists():
        raise CliError(f"checkpoint {ckpt} not found; run `socialrec train` first")
    params, meta = load_checkpoint(ckpt)
    cfg = run.train
    if mode_given and meta.get("mode", cfg.mode) != cfg.mode:
        raise CliError(f"checkpoint was trained in {meta['mode']!r} mode but --mode is {cfg.mode!r}")
    if not mode_given and meta.get("mode", cfg.mode) != cfg.mode:
        cfg = replace(cfg, mode=meta["mode"], dropout_rate=None)
    ds, graph = _load_prepared(wd, cfg)
    report = evaluate(build_network(params, ds, graph, cfg), ds, cfg, split)
    report.write(wd, f"report_{split}.tsv")
    for k, v in report.metrics.items():
        print(f"{k}\t{v:.6f}")
    return EXIT_OK


def cmd_export_attention(run: RunConfig, checkpoint: str | None, user: str, item: str, out: str | None) -> int:
    wd = Path(run.workdir)
    ckpt = Path(checkpoint) if checkpoint else wd / "best.ckpt"
    if not ckpt.exists():
        raise CliError(f"checkpoint {ckpt} not found; run `socialrec train` first")
    params, meta = load_checkpoint(ckpt)
    cfg = run.train
    ds, graph = _load_prepared(wd, cfg)
    if user not in ds.user_ids or item not in ds.item_ids:
        raise CliError(f"unknown pair ({user!r}, {item!r}); valid users are the {ds.n_users} ids "
                       f"in users.map (indices 0..{ds.n_users - 1}), valid items the {ds.n_items} "
                       f"ids in items.map (indices 0..{ds.n_items - 1})")
    u, v = ds.user_ids.index(user), ds.item_ids.index(item)
    net = build_network(params, ds, graph, cfg)
    net.mode = meta.get("mode", cfg.mode)
    result = net.forward([u], [v], [math.inf], training=False, trace=True)
    path = Path(out) if out else wd / "attention.tsv"
    export_attention(result.trace, path)
    print(f"prediction\t{result.predictions.data[0]:.6f}")
    print(f"wrote\t{path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key<TAB>value file; flags override its entries")
    for key in _known_keys():
        if key not in ("mode", "ablation"):
            common.add_argument(f"--{key}", dest=key, default=None)
    common.add_argument("--ablation", default=None,
                        choices=["full", "w/o_LSTM", "w/o_ATT", "w/o_SN", "w/o_CN", "w/o_SC"])
    common.add_argument("--mode", default=None, choices=["rating", "ranking"])
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="socialrec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    prep = sub.add_parser("prepare", parents=[common], help="parse, split and build the item graph")
    prep.add_argument("--force", action="store_true")
    sub.add_parser("train", parents=[common], help="train and write best.ckpt plus reports")
    ev = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a split")
    ev.add_argument("--checkpoint")
    ev.add_argument("--split", default=TEST, choices=[VAL, TEST])
    ex = sub.add_parser("export-attention", parents=[common], help="dump attention weights for one pair")
    ex.add_argument("--checkpoint")
    ex.add_argument("--user", required=True, help="raw user id")
    ex.add_argument("--item", required=True, help="raw item id")
    ex.add_argument("--out")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values: dict[str, str] = {}
        if args.config:
            values.update(read_kv(args.config))
            unknown = sorted(set(values) - set(_known_keys()))
            if unknown:
                raise CliError(f"unknown config keys: {', '.join(unknown)}")
        for key in _known_keys():
            v = getattr(args, key, None)
            if v is not None:
                values[key] = v
        run = build_run_config(values)
        if args.command == "prepare":
            return cmd_prepare(run, args.force)
        if args.command == "train":
            return cmd_train(run)
        if args.command == "evaluate":
            return cmd_evaluate(run, args.checkpoint, args.split, args.mode is not None)
        return cmd_export_attention(run, args.checkpoint, args.user, args.item, args.out)
    except (CliError, ParseError, ValidationError, FileNotFoundError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
