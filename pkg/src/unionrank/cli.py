"""Command-line harness: vocab building, synthesis, training, evaluation,
benchmarking, overlap statistics, and the analytic cost model.

Reports are written as CSV + JSON into --output-dir.  Failures print one
machine-readable JSON error record to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .costmodel import bench, cost_model
from .data import load_dataset, synthesize_dataset, write_jsonl
from .encoder import EncoderConfig, load_checkpoint, save_checkpoint
from .tokenizer import Vocabulary, build_vocab
from .training import TrainConfig, evaluate, train
from .union import overlap_stats


def _read_texts(path: str) -> list[str]:
    texts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            texts.append(row["query"])
            texts.extend(row["items"])
    return texts


def _load(path: str, vocab_path: str):
    vocab = Vocabulary.load(vocab_path)
    result = load_dataset(path, vocab)
    for problem in result.errors:
        print(f"warning: {problem}", file=sys.stderr)
    if not result.instances:
        print("warning: dataset is empty", file=sys.stderr)
    return result.instances


def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write_report(output_dir: str, stem: str, csv_header: str, csv_row: str,
                  payload: str) -> None:
    with open(os.path.join(output_dir, f"{stem}.csv"), "w") as fh:
        fh.write(csv_header + "\n" + csv_row + "\n")
    with open(os.path.join(output_dir, f"{stem}.json"), "w") as fh:
        fh.write(payload + "\n")


def _cmd_build_vocab(args) -> int:
    vocab = build_vocab(_read_texts(args.data), args.max_size)
    vocab.save(args.output)
    print(f"wrote {len(vocab)} ids ({len(vocab) - 4} terms) to {args.output}")
    return 0


def _cmd_synth(args) -> int:
    rows = synthesize_dataset(
        n_queries=args.queries, n_items=args.n_items, overlap=args.overlap,
        vocab_size=args.vocab_size, seed=args.seed, item_len=args.item_len,
        query_len=args.query_len, relevant_per_query=args.relevant,
        planted_relevance=not args.no_relevance)
    write_jsonl(rows, args.output)
    print(f"wrote {len(rows)} queries to {args.output}")
    return 0


def _encoder_from_args(args) -> EncoderConfig | None:
    fields = (args.layers, args.dim, args.heads, args.ff_dim,
              args.max_positions, args.vocab_size)
    if all(v is None for v in fields):
        return None
    defaults = EncoderConfig()
    return EncoderConfig(
        layers=args.layers if args.layers is not None else defaults.layers,
        dim=args.dim if args.dim is not None else defaults.dim,
        heads=args.heads if args.heads is not None else defaults.heads,
        ff_dim=args.ff_dim if args.ff_dim is not None else defaults.ff_dim,
        max_positions=(args.max_positions if args.max_positions is not None
                       else defaults.max_positions),
        vocab_size=(args.vocab_size if args.vocab_size is not None
                    else defaults.vocab_size))


def _train_config(args) -> TrainConfig:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.loads(fh.read())
    overrides = {
        "loss": args.loss,
        "learning_rate": args.lr,
        "schedule": args.schedule,
        "steps": args.steps,
        "batch_size": args.batch_size,
        "n_items": args.n_items,
        "union_budget": args.union_budget,
        "seed": args.seed,
        "reinjection": args.reinjection or None,
        "sort_item_tokens": args.sorted_items or None,
        "weight_decay": args.weight_decay,
    }
    encoder = _encoder_from_args(args)
    if encoder is not None:
        overrides["encoder"] = {
            "layers": encoder.layers, "dim": encoder.dim,
            "heads": encoder.heads, "ff_dim": encoder.ff_dim,
            "max_positions": encoder.max_positions,
            "vocab_size": encoder.vocab_size}
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    return TrainConfig.from_json_dict(base)


def _cmd_train(args) -> int:
    config = _train_config(args)
    dataset = _load(args.data, args.vocab)
    if not dataset:
        raise ValueError("no usable training instances")
    result = train(config, dataset)
    out = _ensure_dir(args.output_dir)
    ckpt = os.path.join(out, "checkpoint.npz")
    save_checkpoint(ckpt, result.params)
    with open(os.path.join(out, "train_log.csv"), "w") as fh:
        fh.write("step,loss\n")
        for step, loss in enumerate(result.step_losses):
            fh.write(f"{step},{loss:.10f}\n")
    summary = {
        "config": config.to_json_dict(),
        "final_loss": result.step_losses[-1] if result.step_losses else None,
        "skipped_instances": result.skipped_instances,
        "checkpoint": ckpt,
    }
    with open(os.path.join(out, "train_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
    print(f"trained {config.steps} steps (loss "
          f"{result.step_losses[0]:.4f} -> {result.step_losses[-1]:.4f}, "
          f"skipped {result.skipped_instances}); checkpoint at {ckpt}")
    return 0


def _cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    dataset = _load(args.data, args.vocab)
    if not dataset:
        raise ValueError("no usable evaluation instances")
    ks = tuple(int(k) for k in args.ks.split(","))
    report, records = evaluate(
        params, dataset, ks=ks, union_budget=args.union_budget,
        reinjection=args.reinjection, pointwise=args.pointwise,
        sort_item_tokens=args.sorted_items)
    out = _ensure_dir(args.output_dir)
    _write_report(out, "metrics", report.csv_header(), report.csv_row(),
                  report.to_json())
    with open(os.path.join(out, "scores.jsonl"), "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    truncated = sum(r["tokens_truncated"] for r in records)
    if truncated:
        print(f"warning: union budget dropped {truncated} tokens",
              file=sys.stderr)
    print(report.to_json())
    return 0


def _cmd_bench(args) -> int:
    params = load_checkpoint(args.checkpoint)
    dataset = _load(args.data, args.vocab)
    if not dataset:
        raise ValueError("no usable instances to benchmark")
    report = bench(params, dataset, union_budget=args.union_budget)
    out = _ensure_dir(args.output_dir)
    _write_report(out, "bench", report.csv_header(), report.csv_row(),
                  report.to_json())
    print(report.to_json())
    return 0


def _cmd_stats(args) -> int:
    dataset = _load(args.data, args.vocab)
    stats = overlap_stats(((inst.query, list(inst.items))
                           for inst in dataset), per_item_cap=args.cap)
    row = stats.csv_row(args.cap)
    header = "L,m,N_u,ratio,skipped_queries"
    if args.output_dir:
        _write_report(_ensure_dir(args.output_dir), "overlap", header, row,
                      json.dumps({
                          "cap": args.cap,
                          "mean_total_tokens": stats.mean_total_tokens,
                          "mean_union_size": stats.mean_union_size,
                          "ratio": stats.ratio,
                          "skipped_queries": stats.skipped_queries,
                      }, sort_keys=True))
    print(header)
    print(row)
    return 0


def _cmd_cost(args) -> int:
    report = cost_model(args.query_len, args.item_len, args.n_items,
                        args.compression, args.layers)
    if args.output_dir:
        _write_report(_ensure_dir(args.output_dir), "cost",
                      report.csv_header(), report.csv_row(),
                      report.to_json())
    print(report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unionrank",
        description="Joint re-ranking over token unions: train, evaluate, "
                    "and cost-model a small encoder ranker.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a vocabulary from a "
                                           "JSONL dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--max-size", type=int, default=4096)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("synth", help="generate a synthetic ranking dataset")
    p.add_argument("--output", required=True)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--n-items", type=int, default=10)
    p.add_argument("--overlap", type=float, default=0.3)
    p.add_argument("--vocab-size", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--item-len", type=int, default=8)
    p.add_argument("--query-len", type=int, default=4)
    p.add_argument("--relevant", type=int, default=3)
    p.add_argument("--no-relevance", action="store_true")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a ranking checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--config", help="JSON file of TrainConfig fields")
    p.add_argument("--loss", choices=("bce", "listnet", "ce", "rpl"))
    p.add_argument("--lr", type=float, dest="lr")
    p.add_argument("--schedule", choices=("linear", "constant"))
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--n-items", type=int)
    p.add_argument("--union-budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--reinjection", action="store_true", default=False)
    p.add_argument("--sorted-items", action="store_true", default=False)
    p.add_argument("--layers", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--ff-dim", type=int)
    p.add_argument("--max-positions", type=int)
    p.add_argument("--vocab-size", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--ks", default="5,10")
    p.add_argument("--union-budget", type=int, default=64)
    p.add_argument("--reinjection", action="store_true")
    p.add_argument("--pointwise", action="store_true")
    p.add_argument("--sorted-items", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="measure joint vs pointwise FLOPs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--union-budget", type=int, default=64)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("stats", help="corpus token-overlap statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--cap", type=int, default=12)
    p.add_argument("--output-dir")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("cost", help="analytic joint vs pointwise cost")
    p.add_argument("--query-len", type=float, required=True)
    p.add_argument("--item-len", type=float, required=True)
    p.add_argument("--n-items", type=int, required=True)
    p.add_argument("--compression", type=float, required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--output-dir")
    p.set_defaults(func=_cmd_cost)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
