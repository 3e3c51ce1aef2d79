"""Command-line experiment harness.

Subcommands: train-fixed, search, random-schedule, ablate-a, eval,
export-curves. Every run directory gets the resolved config, an append-only
metric stream, checkpoints, and plot-ready CSV curves. Exit codes: 0 success,
2 config error, 3 data/format error, 1 internal error.
"""

from __future__ import annotations

import argparse
import sys
import time
import traceback
from pathlib import Path

from .checkpoint import CheckpointFormatError, read_checkpoint, write_checkpoint
from .config import (ConfigError, ExperimentConfig, LOSS_ALIASES, LOSS_KINDS,
                     REWARD_KINDS, distribution_of, from_dict, load_config_file,
                     margin_spec, schedule_of, set_path)
from .contracts import ContractViolation
from .datasets import (DataFormatError, SyntheticSpec, generate_synthetic,
                       load_flat_file, make_pairs, split_closed_set, split_open_set)
from .embed_model import init_model
from .eval_protocols import (FarUnresolvableError, embed_all, make_gallery_probe,
                             pair_similarities, rank1_identification, reward,
                             tpr_at_far, verification_accuracy)
from .margin_losses import modulating_function
from .numerics import RngStream
from .runio import MetricsWriter, dumps, format_float, run_id, write_xy_csv
from .search_engine import SearchSettings, run_random_schedule, run_search
from .sgd_trainer import TrainState, train_epoch

DEFAULT_ABLATION_FACTORS = "0,-1,-10,-100,-1000,-10000"
FAR_LADDER = (0.1, 0.01, 0.001, 0.0001, 1e-05, 1e-06)


# ---------------------------------------------------------------------------
# run assembly


def _resolve_config(args) -> ExperimentConfig:
    tree = load_config_file(args.config) if args.config else {}
    if getattr(args, "seed", None) is not None:
        set_path(tree, "seed", args.seed)
    if getattr(args, "data", None):
        set_path(tree, "dataset.path", args.data)
    if getattr(args, "reward", None):
        set_path(tree, "reward", args.reward)
    if getattr(args, "epochs", None) is not None:
        set_path(tree, "schedule.epochs", args.epochs)
    if getattr(args, "loss", None):
        set_path(tree, "loss.kind", args.loss)
    for key in ("m1", "m2", "m3", "a"):
        value = getattr(args, key, None)
        if value is not None:
            set_path(tree, f"loss.{key}", value)
    if getattr(args, "population", None) is not None:
        set_path(tree, "search.population", args.population)
    if getattr(args, "mu", None) is not None:
        set_path(tree, "search.mu", args.mu)
    if getattr(args, "score_grad", None):
        set_path(tree, "search.score_grad", args.score_grad)
    if getattr(args, "outer", None):
        set_path(tree, "search.outer", args.outer)
    if getattr(args, "transform", None):
        set_path(tree, "search.transform", args.transform)
    if getattr(args, "mag_lo", None) is not None:
        set_path(tree, "random.mag_lo", args.mag_lo)
    if getattr(args, "mag_hi", None) is not None:
        set_path(tree, "random.mag_hi", args.mag_hi)
    return from_dict(tree)


def _prepare_data(config: ExperimentConfig):
    if config.dataset.path is not None:
        path = Path(config.dataset.path)
        if not path.exists():
            raise ConfigError(f"dataset.path: file not found: {path}")
        full = load_flat_file(path)
    else:
        full = generate_synthetic(SyntheticSpec(classes=config.dataset.classes,
                                                dim=config.dataset.dim,
                                                samples_per_class=config.dataset.samples_per_class,
                                                noise_sigma=config.dataset.noise_sigma,
                                                seed=config.seed))
    split = split_closed_set if config.reward == "classification" else split_open_set
    try:
        train, val = split(full, config.dataset.train_frac, config.seed)
        pairs = make_pairs(val, config.dataset.n_pairs, config.seed)
    except ContractViolation as exc:
        raise ConfigError(f"dataset: {exc}") from None
    return train, val, pairs


def _init_state(config: ExperimentConfig, train) -> TrainState:
    dims = [train.feature_dim, *config.model.hidden, config.model.embedding]
    model, head = init_model(dims, train.identity_count, config.model.scale,
                             RngStream(config.seed, "init"))
    return TrainState.fresh(model, head)


def _open_run(out_dir, config: ExperimentConfig):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = config.to_dict()
    rid = run_id(resolved)
    (out / "config.json").write_text(dumps(resolved) + "\n", encoding="utf-8")
    for name in ("metrics.jsonl", "timings.jsonl"):
        (out / name).unlink(missing_ok=True)
    return out, rid


def _loss_echo(config: ExperimentConfig) -> dict:
    """Loss description for metric lines: the kind plus only its own knobs."""
    loss = config.loss
    echo = {"kind": loss.kind}
    if loss.kind in ("angular", "combined"):
        echo["m1"] = loss.m1
    if loss.kind in ("additive-angular", "combined"):
        echo["m2"] = loss.m2
    if loss.kind in ("additive", "combined"):
        echo["m3"] = loss.m3
    if loss.kind == "unified":
        echo["a"] = loss.a
    return echo


def _evaluation_report(model, head, val_set, val_pairs):
    embeddings = embed_all(model, head, val_set)
    verification = verification_accuracy(embeddings, val_pairs)
    split = make_gallery_probe(val_set)
    rank1, cmc = rank1_identification(embeddings[split.gallery_indices],
                                      split.gallery_labels,
                                      embeddings[split.probe_indices],
                                      split.probe_labels)
    sims = pair_similarities(embeddings, val_pairs)
    tpr = {}
    for far in FAR_LADDER:
        try:
            tpr[format(far, "g")] = tpr_at_far(sims, val_pairs.same, far)
        except FarUnresolvableError:
            break
    report = {
        "verification_accuracy": verification.accuracy,
        "rank1": rank1,
        "tpr_at_far": tpr,
        "fold_accuracies": list(verification.fold_accuracies),
        "fold_thresholds": list(verification.fold_thresholds),
    }
    return report, verification.roc_points, cmc


def _write_evaluation(out: Path, report: dict, roc_points, cmc) -> None:
    (out / "eval.json").write_text(dumps(report) + "\n", encoding="utf-8")
    write_xy_csv(out / "roc.csv", roc_points)
    write_xy_csv(out / "cmc.csv", [(float(rank), value)
                                   for rank, value in enumerate(cmc, start=1)])


def _run_fixed(config: ExperimentConfig, out_dir) -> dict:
    """Train one fixed loss end to end; shared by train-fixed and ablate-a."""
    spec = margin_spec(config.loss)
    train, val, pairs = _prepare_data(config)
    state = _init_state(config, train)
    schedule = schedule_of(config)
    out, rid = _open_run(out_dir, config)
    loss_echo = _loss_echo(config)
    root = RngStream(config.seed, "fixed")
    convergence = []
    final_reward = None
    with MetricsWriter(out / "metrics.jsonl") as metrics, \
            MetricsWriter(out / "timings.jsonl") as timings:
        for epoch in range(1, config.schedule.epochs + 1):
            started = time.perf_counter()
            state, mean_loss = train_epoch(state, spec, train, config.sgd,
                                           schedule.lr_at(epoch),
                                           root.child(f"epoch{epoch}"))
            final_reward = reward(state.model, state.head, val, pairs, config.reward)
            metrics.write({"run_id": rid, "mode": "fixed", "epoch": epoch,
                           "loss": loss_echo, "lr": schedule.lr_at(epoch),
                           "mean_loss": mean_loss, "val_reward": final_reward})
            timings.write({"epoch": epoch, "seconds": time.perf_counter() - started})
            convergence.append((float(epoch), mean_loss))
    write_checkpoint(out / "model.lfs", state.model, state.head)
    write_xy_csv(out / "convergence.csv", convergence)
    report, roc_points, cmc = _evaluation_report(state.model, state.head, val, pairs)
    report["final_val_reward"] = final_reward
    _write_evaluation(out, report, roc_points, cmc)
    return report


# ---------------------------------------------------------------------------
# subcommands


def _cmd_train_fixed(args) -> int:
    config = _resolve_config(args)
    report = _run_fixed(config, args.out)
    print(f"train-fixed done: loss={config.loss.kind} "
          f"verification={report['verification_accuracy']:.4f} "
          f"rank1={report['rank1']:.4f} -> {args.out}")
    return 0


def _cmd_search(args) -> int:
    config = _resolve_config(args)
    settings = SearchSettings(distribution=distribution_of(config),
                              epochs=config.schedule.epochs,
                              sgd=config.sgd, schedule=schedule_of(config),
                              reward_kind=config.reward,
                              score_grad=config.search.score_grad,
                              outer=config.search.outer,
                              transform=config.search.transform)
    train, val, pairs = _prepare_data(config)
    state0 = _init_state(config, train)
    out, rid = _open_run(args.out, config)
    winners = out / "checkpoints"
    winners.mkdir(exist_ok=True)
    metrics = MetricsWriter(out / "metrics.jsonl")
    timings = MetricsWriter(out / "timings.jsonl")
    mu_points = []
    convergence = []
    clock = [time.perf_counter()]

    def on_epoch(record, winner_state):
        now = time.perf_counter()
        metrics.write({"run_id": rid, "mode": "search", "epoch": record.epoch,
                       "mu_before": record.mu_before, "mu_after": record.mu_after,
                       "factors": list(record.factors),
                       "rewards": list(record.raw_rewards),
                       "normalized_rewards": list(record.normalized_rewards),
                       "winner": record.winner,
                       "mean_losses": list(record.mean_losses),
                       "start_digest": record.start_digest,
                       "winner_digest": record.winner_digest})
        timings.write({"epoch": record.epoch, "seconds": now - clock[0]})
        clock[0] = now
        write_checkpoint(winners / f"epoch_{record.epoch:03d}.lfs",
                         winner_state.model, winner_state.head)
        mu_points.append((float(record.epoch), record.mu_after))
        convergence.append((float(record.epoch), record.mean_losses[record.winner]))

    try:
        result = run_search(settings, state0, train, val, pairs, config.seed,
                            threads=args.threads, on_epoch=on_epoch)
    finally:
        metrics.close()
        timings.close()
    write_xy_csv(out / "mu_trajectory.csv", mu_points)
    write_xy_csv(out / "convergence.csv", convergence)
    best = result.best_state
    write_checkpoint(out / "best.lfs", best.model, best.head)
    report, roc_points, cmc = _evaluation_report(best.model, best.head, val, pairs)
    report["best_reward"] = result.best_reward
    report["best_epoch"] = result.best_epoch
    report["best_candidate"] = result.best_candidate
    report["final_mu"] = result.final_mu
    _write_evaluation(out, report, roc_points, cmc)
    print(f"search done: best reward {result.best_reward} at epoch "
          f"{result.best_epoch} (candidate {result.best_candidate}), "
          f"final mu {result.final_mu:.6g} -> {args.out}")
    return 0


def _cmd_random_schedule(args) -> int:
    config = _resolve_config(args)
    train, val, pairs = _prepare_data(config)
    state0 = _init_state(config, train)
    out, rid = _open_run(args.out, config)
    metrics = MetricsWriter(out / "metrics.jsonl")
    timings = MetricsWriter(out / "timings.jsonl")
    convergence = []
    clock = [time.perf_counter()]

    def on_epoch(record, _state):
        now = time.perf_counter()
        metrics.write({"run_id": rid, "mode": "random", "epoch": record.epoch,
                       "a": record.factor, "mean_loss": record.mean_loss,
                       "val_reward": record.reward})
        timings.write({"epoch": record.epoch, "seconds": now - clock[0]})
        clock[0] = now
        convergence.append((float(record.epoch), record.mean_loss))

    try:
        state, history = run_random_schedule(
            config.schedule.epochs, state0, train, val, pairs, config.sgd,
            schedule_of(config), config.seed, mag_lo=config.random.mag_lo,
            mag_hi=config.random.mag_hi, reward_kind=config.reward,
            on_epoch=on_epoch)
    finally:
        metrics.close()
        timings.close()
    write_xy_csv(out / "convergence.csv", convergence)
    write_checkpoint(out / "model.lfs", state.model, state.head)
    report, roc_points, cmc = _evaluation_report(state.model, state.head, val, pairs)
    report["final_val_reward"] = history[-1].reward if history else None
    _write_evaluation(out, report, roc_points, cmc)
    print(f"random-schedule done: final reward "
          f"{report['final_val_reward']} -> {args.out}")
    return 0


def _parse_float_list(text: str, field: str) -> list:
    try:
        values = [float(token) for token in text.split(",") if token.strip()]
    except ValueError:
        raise ConfigError(f"{field}: could not parse {text!r} as floats") from None
    if not values:
        raise ConfigError(f"{field}: list is empty")
    return values


def _cmd_ablate_a(args) -> int:
    factors = _parse_float_list(args.factors, "factors")
    for value in factors:
        if value > 0:
            raise ConfigError(f"factors: {value:g} is positive; factors must be <= 0")
    config = _resolve_config(args)
    base = Path(args.out)
    base.mkdir(parents=True, exist_ok=True)
    summary = []
    for value in factors:
        tree = config.to_dict()
        tree["loss"]["kind"] = "unified"
        tree["loss"]["a"] = value
        sub_config = from_dict(tree)
        report = _run_fixed(sub_config, base / f"a_{value:g}")
        summary.append({"a": value,
                        "verification_accuracy": report["verification_accuracy"],
                        "rank1": report["rank1"],
                        "final_val_reward": report["final_val_reward"]})
    (base / "summary.json").write_text(dumps(summary) + "\n", encoding="utf-8")
    print(f"{'a':>10}  {'verification':>12}  {'rank1':>8}")
    for row in summary:
        print(f"{row['a']:>10g}  {row['verification_accuracy']:>12.4f}  "
              f"{row['rank1']:>8.4f}")
    return 0


def _cmd_eval(args) -> int:
    config = _resolve_config(args)
    path = Path(args.checkpoint)
    if not path.exists():
        raise CheckpointFormatError(f"checkpoint not found: {path}")
    model, head = read_checkpoint(path)
    _train, val, pairs = _prepare_data(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report, roc_points, cmc = _evaluation_report(model, head, val, pairs)
    _write_evaluation(out, report, roc_points, cmc)
    print(f"verification_accuracy {report['verification_accuracy']:.6f}")
    print(f"rank1 {report['rank1']:.6f}")
    for far, tpr in report["tpr_at_far"].items():
        print(f"tpr@far={far} {tpr:.6f}")
    return 0


def _cmd_export_curves(args) -> int:
    factors = _parse_float_list(args.a_list, "a-list")
    for value in factors:
        if value > 0:
            raise ConfigError(f"a-list: {value:g} is positive; factors must be <= 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["p"]
    for value in factors:
        header.append(f"h[a={value:g}]")
        header.append(f"pm[a={value:g}]")
    lines = [",".join(header)]
    for i in range(1001):
        p = i / 1000.0
        cells = [f"{p:.3f}"]
        for value in factors:
            h = modulating_function(value, p)
            cells.append(format_float(h))
            cells.append(format_float(h * p))
        lines.append(",".join(cells))
    target = out / "curves.csv"
    target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {target}")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfsearch",
        description="Margin-softmax loss family with reward-guided factor search.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON settings file")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("--out", required=True, metavar="DIR", help="run directory")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for candidate training")

    data_opts = argparse.ArgumentParser(add_help=False)
    data_opts.add_argument("--data", metavar="PATH",
                           help="CSV dataset instead of the synthetic default")
    data_opts.add_argument("--reward", choices=REWARD_KINDS,
                           help="validation score driving rewards")
    data_opts.add_argument("--epochs", type=int, help="override schedule.epochs")

    p = sub.add_parser("train-fixed", parents=[common, data_opts],
                       help="train one fixed loss")
    p.add_argument("--loss", choices=list(LOSS_KINDS) + list(LOSS_ALIASES),
                   help="loss family")
    p.add_argument("--m1", type=int, help="angular multiplier")
    p.add_argument("--m2", type=float, help="additive angle margin (radians)")
    p.add_argument("--m3", type=float, help="additive cosine margin")
    p.add_argument("--a", type=float, help="unified modulating factor (<= 0)")
    p.set_defaults(handler=_cmd_train_fixed)

    p = sub.add_parser("search", parents=[common, data_opts],
                       help="reward-guided search over the factor")
    p.add_argument("--population", type=int, help="candidates per epoch")
    p.add_argument("--mu", type=float, help="initial distribution mean")
    p.add_argument("--score-grad", dest="score_grad", choices=("mu", "a"))
    p.add_argument("--outer", choices=("sgd", "adam"))
    p.add_argument("--transform", choices=("identity", "negexp"))
    p.set_defaults(handler=_cmd_search)

    p = sub.add_parser("random-schedule", parents=[common, data_opts],
                       help="resample the factor every epoch, no guidance")
    p.add_argument("--mag-lo", dest="mag_lo", type=float,
                   help="low end of the factor magnitude range")
    p.add_argument("--mag-hi", dest="mag_hi", type=float,
                   help="high end of the factor magnitude range")
    p.set_defaults(handler=_cmd_random_schedule)

    p = sub.add_parser("ablate-a", parents=[common, data_opts],
                       help="train one fixed factor per listed value")
    p.add_argument("--factors", default=DEFAULT_ABLATION_FACTORS,
                   help="comma-separated factors (all <= 0)")
    p.set_defaults(handler=_cmd_ablate_a)

    p = sub.add_parser("eval", parents=[common, data_opts],
                       help="evaluate a checkpoint under the configured protocol")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("export-curves", parents=[common],
                       help="emit h(a,p) and reduced-probability curves")
    p.add_argument("--a-list", dest="a_list", default=DEFAULT_ABLATION_FACTORS,
                   help="comma-separated factors (all <= 0)")
    p.set_defaults(handler=_cmd_export_curves)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, CheckpointFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except ContractViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
