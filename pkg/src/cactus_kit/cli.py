"""Command-line entry point.

Subcommands: gen, train, eval, predict, bench-attention, ingest-llm, ablate.
Every command derives all of its randomness from one --seed through named
derivation, emits its delimited artifacts plus rendered figures, and writes
a manifest sufficient to re-run it bit-identically. Exit codes: 0 success,
1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .cluster import threshold_grid
from .data import (
    DatasetFormatError,
    SelfSupConfig,
    Splits,
    SyntheticConfig,
    generate_selfsup_sample,
    generate_synthetic_benchmark,
    load_dataset,
    load_entity_sets,
    load_raw_outputs,
    load_universe,
    parse_llm_clustering,
    write_dataset,
    LabeledSample,
    SplitSpec,
)
from .encoder import (
    AttentionMode,
    Checkpoint,
    ConfigError,
    EncoderConfig,
    EntitySet,
    attention_stats,
    count_attention_logits,
    encode_set,
    Entity,
)
from .losses import similarity_matrix
from .reporting import (
    RunManifest,
    render_ablation_figure,
    render_bench_figure,
    render_eval_figure,
    render_sweep_figure,
    render_training_figure,
    write_report,
)
from .training import (
    DivergenceError,
    TrainConfig,
    derive_seed,
    evaluate,
    finetune,
    predict_clustering,
    pretrain,
    sweep_validation_threshold,
)

MODE_CHOICES = [m.value for m in AttentionMode]
LOSS_CHOICES = ["triplet", "aug-triplet", "bce"]


class UsageError(ValueError):
    """Bad flags or unusable input files; exits with status 2."""


def _require_file(path_str: str) -> Path:
    path = Path(path_str)
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")
    return path


def _manifest(args, command: str, config: dict) -> RunManifest:
    argv = [command] + [a for a in sys.argv[2:]] if sys.argv[1:2] == [command] else [command]
    return RunManifest(command=command, argv=argv, config=config, seed=args.seed)


def _encoder_config(args, seed: int) -> EncoderConfig:
    return EncoderConfig(
        vocab_size=args.vocab_size,
        d_model=args.d_model,
        n_layers=args.layers,
        n_heads=args.heads,
        ffn_dim=args.ffn_dim,
        attention_mode=AttentionMode.parse(args.mode),
        seed=seed,
    )


def _load_splits(args) -> Splits:
    path = _require_file(args.data)
    spec = SplitSpec(test_size=args.test_size, valid_size=args.valid_size,
                     seed=derive_seed(args.seed, "split"))
    return load_dataset(path, spec)


def _universe_from(samples) -> list[Entity]:
    seen: dict[str, Entity] = {}
    for sample in samples:
        for entity in sample.entity_set.entities:
            seen.setdefault(entity.id, entity)
    return list(seen.values())


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, "gen", {k: v for k, v in vars(args).items() if k != "func"})
    start = time.perf_counter()

    if args.synthetic:
        cfg = SyntheticConfig(
            n_topics=args.topics,
            vocab_per_topic=args.vocab_per_topic,
            n_sets=args.sets,
            entities_per_set=args.entities_per_set,
            homonym_rate=args.homonym_rate,
            noise_rate=args.noise_rate,
        )
        rng = np.random.default_rng(derive_seed(args.seed, "synthetic-benchmark"))
        samples = generate_synthetic_benchmark(cfg, rng)
    else:
        universe = load_universe(_require_file(args.universe))
        manifest.add_input(args.universe)
        sscfg = SelfSupConfig()
        samples = []
        for i in range(args.samples):
            rng = np.random.default_rng(derive_seed(args.seed, f"selfsup-sample-{i}"))
            samples.append(generate_selfsup_sample(universe, sscfg, rng, set_id=f"selfsup{i:06d}"))

    write_dataset(out, samples)
    manifest.add_output(out)
    manifest.wall_clock_s = time.perf_counter() - start
    manifest.write(out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {len(samples)} sets to {out}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, "train", {k: v for k, v in vars(args).items() if k != "func"})
    start = time.perf_counter()

    splits = _load_splits(args)
    manifest.add_input(args.data)
    if not splits.train or not splits.valid:
        raise UsageError(f"dataset {args.data} has empty train or valid split")

    checkpoint = Checkpoint.initialize(_encoder_config(args, derive_seed(args.seed, "encoder-init")))
    train_cfg = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        pretrain_batches=args.pretrain_batches, loss=args.loss, margin=args.margin,
        seed=derive_seed(args.seed, "train"),
    )

    log_rows: list[dict] = []
    if args.pretrain:
        universe = _universe_from(splits.train)
        pretrain(checkpoint, universe, SelfSupConfig(), train_cfg, log=log_rows.append)

    best, history = finetune(checkpoint, splits.train, splits.valid, train_cfg,
                             log=log_rows.append)
    theta, _ = sweep_validation_threshold(best, splits.valid)
    best.meta = {
        "epoch": max(history, key=lambda r: r.combined).epoch if history else None,
        "theta": theta,
        "validation": max((r.means for r in history), key=lambda m: sum(m.values()), default=None),
        "loss": args.loss,
    }

    ckpt_path = out_dir / "checkpoint.ckpt"
    best.save(ckpt_path)
    log_path = out_dir / "train_log.jsonl"
    write_report(log_path, "cactus-kit/train-log", log_rows)
    fig_path = out_dir / "train_curves.png"
    epoch_rows = [
        {"epoch": r.epoch, "loss": r.train_loss, "theta": r.theta, "combined": r.combined}
        for r in history
    ]
    if epoch_rows:
        render_training_figure(epoch_rows, fig_path)
        manifest.add_volatile(fig_path)

    manifest.add_output(ckpt_path)
    manifest.add_output(log_path)
    manifest.wall_clock_s = time.perf_counter() - start
    manifest.write(out_dir / "manifest.json")
    for r in history:
        print(f"epoch {r.epoch}: loss={r.train_loss} theta={r.theta} combined={r.combined:.4f}")
    print(f"selected epoch {best.meta['epoch']} (theta={theta}); checkpoint at {ckpt_path}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _pick_split(splits: Splits, name: str) -> list[LabeledSample]:
    chosen = {
        "train": splits.train, "valid": splits.valid, "test": splits.test,
        "all": splits.train + splits.valid + splits.test,
    }[name]
    if not chosen:
        raise UsageError(f"requested split {name!r} is empty")
    return list(chosen)


def cmd_eval(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, "eval", {k: v for k, v in vars(args).items() if k != "func"})
    start = time.perf_counter()

    checkpoint = Checkpoint.load(_require_file(args.checkpoint))
    manifest.add_input(args.checkpoint)
    splits = _load_splits(args)
    manifest.add_input(args.data)
    samples = _pick_split(splits, args.split)

    if args.sweep:
        sweep_samples = _pick_split(splits, args.sweep_split)
        theta, rows = sweep_validation_threshold(checkpoint, sweep_samples)
        sweep_path = out_dir / "sweep_table.jsonl"
        write_report(sweep_path, "cactus-kit/sweep-table", rows)
        manifest.add_output(sweep_path)
        sweep_fig = out_dir / "sweep_curve.png"
        render_sweep_figure(rows, theta, sweep_fig)
        manifest.add_volatile(sweep_fig)
        for row in rows:
            print(f"theta={row['theta']:+.1f} criterion={row['criterion']:.4f} "
                  + " ".join(f"{k}={row[k]:.4f}" for k in ("nmi", "ami", "ri", "ari", "f1")))
        print(f"best theta on {args.sweep_split}: {theta}")
    else:
        theta = args.threshold

    record = evaluate(checkpoint, samples, theta)
    set_rows = [{"record": "set", **m.to_dict()} for m in record.per_set]
    summary = {
        "record": "summary", "theta": theta, "sets": len(record.per_set),
        "failed": len(record.failed), **{k: record.means[k] for k in record.means},
    }
    report_path = out_dir / "eval_report.jsonl"
    write_report(report_path, "cactus-kit/eval-report", set_rows + [summary])
    manifest.add_output(report_path)
    fig_path = out_dir / "eval_metrics.png"
    render_eval_figure(record.means, [m.to_dict() for m in record.per_set], fig_path)
    manifest.add_volatile(fig_path)

    manifest.wall_clock_s = time.perf_counter() - start
    manifest.write(out_dir / "manifest.json")
    means = " ".join(f"{k}={v:.4f}" for k, v in record.means.items())
    print(f"split={args.split} theta={theta} sets={len(record.per_set)} {means}")
    if record.failed:
        print(f"failed sets: {', '.join(record.failed)}")
    return 0


# ---------------------------------------------------------------------------
# predict


def cmd_predict(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, "predict", {k: v for k, v in vars(args).items() if k != "func"})
    start = time.perf_counter()

    checkpoint = Checkpoint.load(_require_file(args.checkpoint))
    manifest.add_input(args.checkpoint)
    sets = load_entity_sets(_require_file(args.data))
    manifest.add_input(args.data)

    rows = []
    for eset in sorted(sets, key=lambda s: s.set_id):
        clustering = predict_clustering(checkpoint, eset, args.threshold)
        groups = [[eset.entities[i].id for i in group] for group in clustering.clusters()]
        rows.append({
            "set_id": eset.set_id,
            "entities": [{"id": e.id, "text": e.text} for e in eset.entities],
            "clusters": groups,
        })
    write_report(out, "cactus-kit/labeled-sets", rows)
    manifest.add_output(out)
    manifest.wall_clock_s = time.perf_counter() - start
    manifest.write(out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote predictions for {len(rows)} sets to {out}")
    return 0


# ---------------------------------------------------------------------------
# bench-attention


def _parse_int_list(raw: str, flag: str) -> list[int]:
    try:
        values = [int(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects a comma-separated integer list, got {raw!r}") from None
    if not values or any(v < 1 for v in values):
        raise UsageError(f"{flag} needs positive integers, got {raw!r}")
    return values


def cmd_bench_attention(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, "bench-attention", {k: v for k, v in vars(args).items() if k != "func"})
    start = time.perf_counter()

    n_values = _parse_int_list(args.n_values, "--n-values")
    l_values = _parse_int_list(args.l_values, "--l-values")
    modes = [AttentionMode.parse(m.strip()) for m in args.modes.split(",") if m.strip()]
    if not modes:
        raise UsageError("--modes must name at least one attention mode")

    rows: list[dict] = []
    timing_rows: list[dict] = []
    for mode in modes:
        cfg = EncoderConfig(
            vocab_size=args.vocab_size, d_model=args.d_model, n_layers=args.layers,
            n_heads=args.heads, ffn_dim=args.ffn_dim, attention_mode=mode,
            max_set_tokens=max(n_values) * max(l_values) + 1,
            seed=derive_seed(args.seed, "bench-encoder"),
        )
        checkpoint = Checkpoint.initialize(cfg)
        for n in n_values:
            for l in l_values:
                entities = tuple(
                    Entity(id=f"e{i}", text=" ".join(f"w{i}x{j}" for j in range(l)))
                    for i in range(n)
                )
                eset = EntitySet(set_id=f"bench-n{n}-l{l}", entities=entities)
                expected = count_attention_logits([l] * n, mode)
                t0 = time.perf_counter()
                with attention_stats() as stats:
                    encode_set(eset, checkpoint)
                elapsed = time.perf_counter() - t0
                measured = stats.logit_entries // (cfg.n_layers * cfg.n_heads)
                rows.append({
                    "mode": mode.value, "n": n, "l": l,
                    "logit_count": expected, "measured_logits": measured,
                    "peak_scoring_bytes": stats.peak_bytes,
                })
                timing_rows.append({"mode": mode.value, "n": n, "l": l,
                                    "wall_clock_s": elapsed})

    table_path = out_dir / "bench_table.jsonl"
    write_report(table_path, "cactus-kit/bench-table", rows)
    manifest.add_output(table_path)
    timing_path = out_dir / "bench_timings.jsonl"
    write_report(timing_path, "cactus-kit/bench-timings", timing_rows)
    manifest.add_volatile(timing_path)
    fig_path = out_dir / "bench_costs.png"
    render_bench_figure(rows, fig_path)
    manifest.add_volatile(fig_path)

    manifest.wall_clock_s = time.perf_counter() - start
    manifest.write(out_dir / "manifest.json")
    for row in rows:
        print(f"mode={row['mode']:9s} n={row['n']:3d} l={row['l']:3d} "
              f"logits={row['logit_count']:8d} peak_bytes={row['peak_scoring_bytes']}")
    return 0


# ---------------------------------------------------------------------------
# ingest-llm


def cmd_ingest_llm(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, "ingest-llm", {k: v for k, v in vars(args).items() if k != "func"})
    start = time.perf_counter()

    raw_rows = load_raw_outputs(_require_file(args.raw))
    manifest.add_input(args.raw)
    sets = {s.set_id: s for s in load_entity_sets(_require_file(args.sets))}
    manifest.add_input(args.sets)

    accepted: list[LabeledSample] = []
    report_rows: list[dict] = []
    rejected = 0
    entities_total = 0
    entities_dropped = 0
    for row in raw_rows:
        eset = sets.get(row["set_id"])
        if eset is None:
            raise UsageError(f"raw output references unknown set {row['set_id']!r}")
        entities_total += len(eset)
        result = parse_llm_clustering(row["raw_text"], eset)
        if not result.accepted:
            rejected += 1
            report_rows.append({"record": "set", "set_id": eset.set_id,
                                "status": "rejected", "reason": result.reason})
            continue
        entities_dropped += result.dropped
        accepted.append(LabeledSample(result.entity_set, result.clustering))
        report_rows.append({"record": "set", "set_id": eset.set_id, "status": "accepted",
                            "matched": result.matched, "dropped": result.dropped})

    reject_rate = rejected / len(raw_rows) if raw_rows else 0.0
    drop_rate = entities_dropped / entities_total if entities_total else 0.0
    summary = {
        "record": "summary", "sets_total": len(raw_rows), "rejected": rejected,
        "reject_rate": reject_rate, "entities_total": entities_total,
        "entities_dropped": entities_dropped, "drop_rate": drop_rate,
    }

    dataset_path = out_dir / "ingested.jsonl"
    write_dataset(dataset_path, accepted)
    manifest.add_output(dataset_path)
    report_path = out_dir / "parse_report.jsonl"
    write_report(report_path, "cactus-kit/parse-report", report_rows + [summary])
    manifest.add_output(report_path)

    manifest.wall_clock_s = time.perf_counter() - start
    manifest.write(out_dir / "manifest.json")
    print(f"accepted {len(accepted)}/{len(raw_rows)} sets "
          f"(reject rate {100 * reject_rate:.2f}%, entity drop rate {100 * drop_rate:.2f}%)")
    return 0


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, "ablate", {k: v for k, v in vars(args).items() if k != "func"})
    start = time.perf_counter()

    modes = [AttentionMode.parse(m.strip()) for m in args.modes.split(",") if m.strip()]
    losses = [l.strip() for l in args.losses.split(",") if l.strip()]
    for loss in losses:
        if loss not in LOSS_CHOICES:
            raise UsageError(f"unknown loss {loss!r} in --losses")
    pretrain_grid = [p.strip() == "on" for p in args.pretrain_grid.split(",") if p.strip()]

    cells = [
        {"mode": mode.value, "loss": loss, "pretrain": pre}
        for mode in modes for loss in losses for pre in pretrain_grid
    ]
    if args.plan_only:
        plan_path = out_dir / "ablation_plan.jsonl"
        write_report(plan_path, "cactus-kit/ablation-plan", cells)
        manifest.add_output(plan_path)
        manifest.wall_clock_s = time.perf_counter() - start
        manifest.write(out_dir / "manifest.json")
        print(f"planned {len(cells)} grid cells")
        return 0

    splits = _load_splits(args)
    manifest.add_input(args.data)
    train = list(splits.train)[: args.sets_cap] if args.sets_cap else list(splits.train)
    if not train or not splits.valid or not splits.test:
        raise UsageError("ablation needs nonempty train, valid, and test splits")

    rows: list[dict] = []
    for cell in cells:
        cfg = EncoderConfig(
            vocab_size=args.vocab_size, d_model=args.d_model, n_layers=args.layers,
            n_heads=args.heads, ffn_dim=args.ffn_dim,
            attention_mode=AttentionMode.parse(cell["mode"]),
            seed=derive_seed(args.seed, "encoder-init"),
        )
        checkpoint = Checkpoint.initialize(cfg)
        train_cfg = TrainConfig(
            learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
            pretrain_batches=args.pretrain_batches, loss=cell["loss"], margin=args.margin,
            seed=derive_seed(args.seed, "train"),
        )
        if cell["pretrain"]:
            pretrain(checkpoint, _universe_from(train), SelfSupConfig(), train_cfg)
        best, _ = finetune(checkpoint, train, splits.valid, train_cfg)
        theta, _ = sweep_validation_threshold(best, splits.valid)
        record = evaluate(best, splits.test, theta)
        rows.append({**cell, "theta": theta, **record.means})
        print(f"mode={cell['mode']:9s} loss={cell['loss']:11s} "
              f"pretrain={'on' if cell['pretrain'] else 'off':3s} ami={record.means['ami']:.4f}")

    grid_path = out_dir / "ablation_grid.jsonl"
    write_report(grid_path, "cactus-kit/ablation-grid", rows)
    manifest.add_output(grid_path)
    fig_path = out_dir / "ablation.png"
    render_ablation_figure(rows, fig_path)
    manifest.add_volatile(fig_path)
    manifest.wall_clock_s = time.perf_counter() - start
    manifest.write(out_dir / "manifest.json")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_encoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODE_CHOICES, default=AttentionMode.SIA_HID_MEAN.value,
                   help="inter-entity attention wiring")
    p.add_argument("--vocab-size", type=int, default=4096)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ffn-dim", type=int, default=64)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", choices=LOSS_CHOICES, default="aug-triplet")
    p.add_argument("--margin", type=float, default=0.3)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--pretrain-batches", type=int, default=20_000)


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--test-size", type=int, default=3000)
    p.add_argument("--valid-size", type=int, default=1000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cactus-kit",
        description="Context-aware supervised clustering of entity sets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic benchmark or self-supervised samples")
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--synthetic", action="store_true", help="topic-structured benchmark")
    kind.add_argument("--selfsup", action="store_true", help="word-drop clustering samples")
    p.add_argument("--topics", type=int, default=6)
    p.add_argument("--sets", type=int, default=100)
    p.add_argument("--entities-per-set", type=int, default=10)
    p.add_argument("--vocab-per-topic", type=int, default=12)
    p.add_argument("--homonym-rate", type=float, default=0.3)
    p.add_argument("--noise-rate", type=float, default=0.05)
    p.add_argument("--universe", help="entity universe file (selfsup)")
    p.add_argument("--samples", type=int, default=1000, help="sample count (selfsup)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train an encoder on a labeled dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pretrain", action="store_true",
                   help="run self-supervised pretraining before finetuning")
    _add_encoder_flags(p)
    _add_train_flags(p)
    _add_split_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "valid", "test", "all"], default="test")
    how = p.add_mutually_exclusive_group(required=True)
    how.add_argument("--threshold", type=float, help="fixed stopping threshold in [-1, 1]")
    how.add_argument("--sweep", action="store_true",
                     help="sweep all 21 thresholds on --sweep-split, then evaluate at the best")
    p.add_argument("--sweep-split", choices=["train", "valid", "test"], default="valid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_split_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="cluster entity sets with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="entity-sets file (no ground truth needed)")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench-attention", help="attention cost table across modes")
    p.add_argument("--n-values", default="2,4,8,16", help="comma list of entity counts")
    p.add_argument("--l-values", default="4,8,16,32", help="comma list of tokens per entity")
    p.add_argument("--modes", default=",".join(MODE_CHOICES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_bench_attention)

    p = sub.add_parser("ingest-llm", help="parse raw clustering text into a labeled dataset")
    p.add_argument("--raw", required=True, help="raw outputs file ({set_id, raw_text})")
    p.add_argument("--sets", required=True, help="entity-sets file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest_llm)

    p = sub.add_parser("ablate", help="grid over attention modes, losses, and pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--modes", default=",".join(MODE_CHOICES))
    p.add_argument("--losses", default=",".join(LOSS_CHOICES))
    p.add_argument("--pretrain-grid", default="on,off")
    p.add_argument("--sets-cap", type=int, default=0,
                   help="truncate the train split (0 = use all)")
    p.add_argument("--plan-only", action="store_true", help="write the grid without running")
    _add_encoder_flags(p)
    _add_train_flags(p)
    _add_split_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DatasetFormatError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (DivergenceError, RuntimeError, OSError) as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
