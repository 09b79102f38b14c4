"""Command-line front end wiring the pipeline into reproducible runs.

Every command reads one config file, writes its artifacts under --out, and
finishes with a manifest.json recording the command, the verbatim config,
and content hashes of all inputs and outputs.  Reruns with the same config
and seed produce byte-identical numeric artifacts.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from . import harness, lifetimes, training
from .autodiff import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_config
from .corpus import (
    ClickLog,
    derive_publish_times,
    load_behaviors,
    load_news,
    split_impressions,
    write_behaviors,
    write_news,
)
from .lifetimes import DEFINITIONS, build_lifetime_table, click_coverage
from .model import Featurizer, init_params, model_signature
from .synthgen import write_dataset

__all__ = ["main"]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig,
                    inputs: list[Path], outputs: list[Path], seed: int) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "config_hash": cfg.config_hash,
        "config_text": cfg.text,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {str(p.relative_to(out_dir)): _sha256(p) for p in outputs},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_splits(cfg: RunConfig):
    """Load the corpus and return (log, (train, dev, test))."""
    d = cfg.data
    if not d.news:
        raise ConfigError("missing [data] news path")
    news, vocab = load_news(d.news, title_len=d.title_len)
    if d.provided_splits:
        for key in ("behaviors_train", "behaviors_dev", "behaviors_test"):
            if not getattr(d, key):
                raise ConfigError(f"provided-files split needs [data] {key}")
        parts = []
        all_clicks = []
        counters = {"dropped_candidates": 0, "dropped_history": 0,
                    "skipped_impressions": 0}
        for path in (d.behaviors_train, d.behaviors_dev, d.behaviors_test):
            imps, clicks, counts = load_behaviors(path, news, d.history_len)
            parts.append(imps)
            all_clicks.extend(clicks)
            for k in counters:
                counters[k] += counts[k]
        all_imps = sorted(
            (im for split in parts for im in split),
            key=lambda im: (im.time, im.impression_id),
        )
        all_clicks.sort(key=lambda c: (c.click_time, c.user_id, c.news_id))
        derive_publish_times(news, all_imps, all_clicks)
        log = ClickLog(news=news, impressions=all_imps, clicks=all_clicks,
                       vocab=vocab, **counters)
        return log, tuple(parts)
    if not d.behaviors:
        raise ConfigError("missing [data] behaviors path (or per-split files)")
    imps, clicks, counters = load_behaviors(d.behaviors, news, d.history_len)
    derive_publish_times(news, imps, clicks)
    log = ClickLog(news=news, impressions=imps, clicks=clicks, vocab=vocab, **counters)
    return log, split_impressions(imps, cfg.experiment.split_fractions)


def _input_paths(cfg: RunConfig) -> list[Path]:
    d = cfg.data
    paths = [d.news, d.behaviors, d.behaviors_train, d.behaviors_dev, d.behaviors_test]
    return [Path(p) for p in paths if p]


def _signature(cfg: RunConfig, log: ClickLog, age_repr: bool) -> str:
    e = cfg.experiment
    return model_signature(e.dims, log.vocab.num_tokens, log.vocab.num_topics,
                           log.vocab.num_subtopics, e.buckets, age_repr)


def _featurizer(cfg: RunConfig, log: ClickLog, table) -> Featurizer:
    e = cfg.experiment
    return Featurizer(log, table, e.definition, e.dims, e.buckets, e.fparams)


def _render_rows(rows: list[dict], key_col: str) -> str:
    cols = [key_col] + [k for k in rows[0] if k != key_col]
    widths = {c: max(len(c), max(len(_fmt(r[c])) for r in rows)) for c in cols}
    lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
    for r in rows:
        lines.append("  ".join(_fmt(r[c]).ljust(widths[c]) for c in cols))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Path, seed: int | None) -> int:
    if cfg.synth is None:
        raise ConfigError("simulate needs a [synth] section")
    spec = cfg.synth if seed is None else dataclasses.replace(cfg.synth, seed=seed)
    paths = write_dataset(spec, out)
    print(f"wrote {paths['news']}, {paths['behaviors']}, {paths['truth']}")
    _write_manifest(out, "simulate", cfg, [], list(paths.values()), spec.seed)
    return 0


def cmd_ingest(cfg: RunConfig, out: Path, seed: int) -> int:
    log, splits = _load_splits(cfg)
    news_out = out / "news.tsv"
    behaviors_out = out / "behaviors.tsv"
    write_news(log.news, log.vocab, news_out)
    write_behaviors(log.impressions, behaviors_out)
    stats = {
        "articles": len(log.news),
        "impressions": len(log.impressions),
        "clicks": len(log.clicks),
        "users": len({im.user_id for im in log.impressions}),
        "tokens": log.vocab.num_tokens,
        "topics": log.vocab.num_topics,
        "subtopics": log.vocab.num_subtopics,
        "dropped_candidates": log.dropped_candidates,
        "dropped_history": log.dropped_history,
        "skipped_impressions": log.skipped_impressions,
        "split_sizes": [len(s) for s in splits],
    }
    stats_out = out / "stats.json"
    stats_out.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(json.dumps(stats, indent=2, sort_keys=True))
    _write_manifest(out, "ingest", cfg, _input_paths(cfg),
                    [news_out, behaviors_out, stats_out], seed)
    return 0


def cmd_estimate_lifetimes(cfg: RunConfig, out: Path, seed: int) -> int:
    log, splits = _load_splits(cfg)
    e = cfg.experiment
    table = harness.table_from_split(log, splits[0], e)
    table_out = out / "lifetimes.tsv"
    lifetimes.write_table(table, table_out)
    train_log = harness._clicks_subset(log, splits[0])
    coverage = {
        definition: click_coverage(train_log, table, definition)
        for definition in DEFINITIONS
    }
    cov_out = out / "coverage.json"
    cov_out.write_text(json.dumps(coverage, indent=2, sort_keys=True) + "\n")
    print(f"lifetime table: fixed={table.fixed_lifetime / 3600:.2f}h, "
          f"{len(table.topic_lifetime)} topics, "
          f"{len(table.user_topic_lifetime)} user-topic pairs")
    for definition, frac in coverage.items():
        print(f"click coverage [{definition}]: {frac:.4f}")
    _write_manifest(out, "estimate-lifetimes", cfg, _input_paths(cfg),
                    [table_out, cov_out], seed)
    return 0


def cmd_train(cfg: RunConfig, out: Path, seed: int) -> int:
    log, splits = _load_splits(cfg)
    e = cfg.experiment
    result, dev_report, test_report = harness.run_experiment(
        log, e, e.flags, e.definition, seed, splits=splits
    )
    sig = _signature(cfg, log, e.flags.age_repr)
    ckpt_out = out / "model.ckpt"
    save_checkpoint(ckpt_out, result.best_params, sig)
    curve_out = out / "curve.csv"
    training.write_curve(result.curve, curve_out)
    summary = {
        "best_epoch": result.best_epoch,
        "best_dev_auc": result.best_dev_auc,
        "dev": dev_report.metrics_dict(),
        "test": test_report.metrics_dict(),
        "skipped_examples": result.skipped_examples,
        "model_signature": sig,
    }
    summary_out = out / "train.json"
    summary_out.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"best epoch {result.best_epoch} dev AUC {result.best_dev_auc:.4f} "
          f"test AUC {test_report.auc:.4f}")
    _write_manifest(out, "train", cfg, _input_paths(cfg),
                    [ckpt_out, curve_out, summary_out], seed)
    return 0


def _load_params_for(cfg: RunConfig, log: ClickLog, checkpoint: str):
    e = cfg.experiment
    sig = _signature(cfg, log, e.flags.age_repr)
    params, _hash = load_checkpoint(checkpoint, expected_hash=sig)
    return params, sig


def cmd_evaluate(cfg: RunConfig, out: Path, seed: int, checkpoint: str,
                 split: str) -> int:
    log, splits = _load_splits(cfg)
    e = cfg.experiment
    params, sig = _load_params_for(cfg, log, checkpoint)
    table = harness.table_from_split(log, splits[0], e)
    featurizer = _featurizer(cfg, log, table)
    imps = dict(zip(("train", "dev", "test"), splits))[split]
    report = harness.evaluate(params, featurizer, imps, e.flags, e.fparams,
                              seed, sig)
    errors = harness.error_coverage(report.rankings, featurizer)
    report_out = out / "report.json"
    payload = json.loads(report.to_json())
    payload["error_coverage"] = errors
    report_out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    text_out = out / "report.txt"
    lines = [f"split: {split}", f"flags: {report.flags}",
             f"lifetime definition: {report.lifetime_definition}",
             f"impressions: {report.n_impressions}"]
    for k, v in report.metrics_dict().items():
        lines.append(f"{k}: {v:.4f}")
    lines.append(f"error coverage: {json.dumps(errors, sort_keys=True)}")
    text_out.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    _write_manifest(out, "evaluate", cfg, _input_paths(cfg) + [Path(checkpoint)],
                    [report_out, text_out], seed)
    return 0


def cmd_ablate(cfg: RunConfig, out: Path, seed: int) -> int:
    log, splits = _load_splits(cfg)
    rows = harness.ablate(log, cfg.experiment, list(cfg.seeds), splits=splits)
    json_out = out / "ablation.json"
    json_out.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    txt_out = out / "ablation.txt"
    txt_out.write_text(_render_rows(rows, "flags"))
    print(_render_rows(rows, "flags"))
    _write_manifest(out, "ablate", cfg, _input_paths(cfg), [json_out, txt_out], seed)
    return 0


def cmd_compare_lifetimes(cfg: RunConfig, out: Path, seed: int) -> int:
    log, splits = _load_splits(cfg)
    rows = harness.compare_lifetimes(log, cfg.experiment, list(cfg.seeds),
                                     splits=splits)
    json_out = out / "compare.json"
    json_out.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    txt_out = out / "compare.txt"
    txt_out.write_text(_render_rows(rows, "definition"))
    print(_render_rows(rows, "definition"))
    _write_manifest(out, "compare-lifetimes", cfg, _input_paths(cfg),
                    [json_out, txt_out], seed)
    return 0


def cmd_sweep(cfg: RunConfig, out: Path, seed: int, checkpoint: str,
              split: str) -> int:
    log, splits = _load_splits(cfg)
    e = cfg.experiment
    params, _sig = _load_params_for(cfg, log, checkpoint)
    table = harness.table_from_split(log, splits[0], e)
    featurizer = _featurizer(cfg, log, table)
    imps = dict(zip(("train", "dev", "test"), splits))[split]
    rows = harness.sweep_freshness(params, featurizer, imps, e.flags)
    csv_out = out / "sweep.csv"
    with csv_out.open("w", encoding="utf-8") as fh:
        fh.write("alpha,beta,mrr,ndcg5\n")
        for r in rows:
            fh.write(f"{r['alpha']:.1f},{r['beta']:.1f},{r['mrr']:.6f},{r['ndcg5']:.6f}\n")
    best = max(rows, key=lambda r: r["mrr"])
    print(f"swept {len(rows)} grid points; best MRR {best['mrr']:.4f} "
          f"at alpha={best['alpha']}, beta={best['beta']}")
    _write_manifest(out, "sweep", cfg, _input_paths(cfg) + [Path(checkpoint)],
                    [csv_out], seed)
    return 0


def cmd_explain(cfg: RunConfig, out: Path, seed: int, checkpoint: str,
                impression_id: str) -> int:
    log, splits = _load_splits(cfg)
    e = cfg.experiment
    params, _sig = _load_params_for(cfg, log, checkpoint)
    table = harness.table_from_split(log, splits[0], e)
    featurizer = _featurizer(cfg, log, table)
    matches = [im for im in log.impressions if im.impression_id == impression_id]
    if not matches:
        print(f"error: impression {impression_id!r} not found", file=sys.stderr)
        return 1
    text = harness.explain(matches[0], params, featurizer, e.flags, e.fparams)
    txt_out = out / f"explain_{impression_id}.txt"
    txt_out.write_text(text + "\n")
    print(text)
    _write_manifest(out, "explain", cfg, _input_paths(cfg) + [Path(checkpoint)],
                    [txt_out], seed)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="newslife",
        description="lifetime-aware news recommendation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, **extra_args):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="config file (key = value sections)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--threads", type=int, default=None, help="override [run] threads")
        for flag, kwargs in extra_args.items():
            p.add_argument(flag, **kwargs)
        return p

    add("simulate")
    add("ingest")
    add("estimate-lifetimes")
    add("train")
    add("evaluate",
        **{"--checkpoint": {"required": True},
           "--split": {"default": "test", "choices": ["train", "dev", "test"]}})
    add("ablate")
    add("compare-lifetimes")
    add("sweep",
        **{"--checkpoint": {"required": True},
           "--split": {"default": "test", "choices": ["train", "dev", "test"]}})
    add("explain",
        **{"--checkpoint": {"required": True},
           "--impression": {"required": True}})
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("threads must be >= 1")
            cfg.threads = args.threads
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.seed)
        if args.command == "ingest":
            return cmd_ingest(cfg, out, cfg.seed)
        if args.command == "estimate-lifetimes":
            return cmd_estimate_lifetimes(cfg, out, cfg.seed)
        if args.command == "train":
            return cmd_train(cfg, out, cfg.seed)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out, cfg.seed, args.checkpoint, args.split)
        if args.command == "ablate":
            return cmd_ablate(cfg, out, cfg.seed)
        if args.command == "compare-lifetimes":
            return cmd_compare_lifetimes(cfg, out, cfg.seed)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, cfg.seed, args.checkpoint, args.split)
        if args.command == "explain":
            return cmd_explain(cfg, out, cfg.seed, args.checkpoint, args.impression)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
