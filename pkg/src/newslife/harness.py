"""Evaluation harness: metrics over impressions, ablations, lifetime-definition
comparisons, freshness-parameter sweeps, error-coverage analysis, and
per-impression explanation reports.

Impressions with no positive candidate contribute to no metric; impressions
with no negative are excluded from AUC only.  Both exclusions are counted in
the report metadata.  All experiment entry points are deterministic given
their seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .autodiff import ParamStore
from .corpus import ClickLog, Impression, split_impressions
from .lifetimes import DEFINITIONS, LifetimeTable, build_lifetime_table
from .model import (
    ABLATION_FLAGSETS,
    Featurizer,
    ModelDims,
    StrategyFlags,
    init_params,
    model_signature,
    score_impression,
)
from .temporal import BucketConfig, FreshnessParams, freshness_weight
from .training import TrainConfig, TrainingResult, train

__all__ = [
    "EvalReport",
    "ImpressionRanking",
    "evaluate",
    "run_experiment",
    "ablate",
    "compare_lifetimes",
    "sweep_freshness",
    "error_coverage",
    "explain",
]


@dataclass
class ImpressionRanking:
    impression_id: str
    user_id: str
    time: float
    news_ids: list[str]
    scores: list[float]
    labels: list[int]


@dataclass
class EvalReport:
    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    n_impressions: int
    n_no_positive: int
    n_single_class: int
    flags: str
    lifetime_definition: str
    seed: int
    config_hash: str
    rankings: list[ImpressionRanking] = field(default_factory=list)

    def metrics_dict(self) -> dict[str, float]:
        return {"auc": self.auc, "mrr": self.mrr, "ndcg5": self.ndcg5,
                "ndcg10": self.ndcg10}

    def to_json(self, include_rankings: bool = False) -> str:
        payload = {
            "metrics": self.metrics_dict(),
            "n_impressions": self.n_impressions,
            "n_no_positive": self.n_no_positive,
            "n_single_class": self.n_single_class,
            "flags": self.flags,
            "lifetime_definition": self.lifetime_definition,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }
        if include_rankings:
            payload["rankings"] = [
                {
                    "impression_id": r.impression_id,
                    "user_id": r.user_id,
                    "time": r.time,
                    "news_ids": r.news_ids,
                    "scores": r.scores,
                    "labels": r.labels,
                }
                for r in self.rankings
            ]
        return json.dumps(payload, indent=2, sort_keys=True)


def evaluate(
    params: ParamStore,
    featurizer: Featurizer,
    impressions: list[Impression],
    flags: StrategyFlags,
    fparams: FreshnessParams,
    seed: int = 0,
    config_hash: str = "",
) -> EvalReport:
    """Score every impression in rank mode and average the metrics."""
    aucs: list[float] = []
    mrrs: list[float] = []
    ndcg5s: list[float] = []
    ndcg10s: list[float] = []
    rankings: list[ImpressionRanking] = []
    n_no_pos = 0
    n_single = 0
    for im in impressions:
        feat = featurizer.features(im)
        scores = score_impression(params, feat, flags, fparams, mode="rank").value
        labels = feat.labels
        rankings.append(
            ImpressionRanking(
                im.impression_id,
                im.user_id,
                im.time,
                list(feat.cand_ids),
                [float(s) for s in scores],
                [int(l) for l in labels],
            )
        )
        n_pos = int((labels == 1).sum())
        n_neg = int((labels == 0).sum())
        if n_pos == 0:
            n_no_pos += 1
            continue
        if n_neg == 0:
            n_single += 1
        else:
            aucs.append(metrics.auc(scores, labels))
        mrrs.append(metrics.mrr(scores, labels))
        ndcg5s.append(metrics.ndcg(scores, labels, 5))
        ndcg10s.append(metrics.ndcg(scores, labels, 10))

    def _mean(xs: list[float]) -> float:
        return float(np.mean(xs)) if xs else float("nan")

    return EvalReport(
        auc=_mean(aucs),
        mrr=_mean(mrrs),
        ndcg5=_mean(ndcg5s),
        ndcg10=_mean(ndcg10s),
        n_impressions=len(mrrs),
        n_no_positive=n_no_pos,
        n_single_class=n_single,
        flags=flags.label,
        lifetime_definition=featurizer.definition,
        seed=seed,
        config_hash=config_hash,
        rankings=rankings,
    )


@dataclass
class ExperimentConfig:
    """Everything one training-plus-evaluation run needs besides the log."""

    dims: ModelDims = field(default_factory=ModelDims)
    buckets: BucketConfig = field(default_factory=BucketConfig)
    fparams: FreshnessParams = field(default_factory=FreshnessParams)
    flags: StrategyFlags = field(default_factory=StrategyFlags)
    train: TrainConfig = field(default_factory=TrainConfig)
    definition: str = "user-topic"
    quantile_percent: float = 90.0
    min_user_topic_clicks: int = 3
    fixed_lifetime: float = 36 * 3600.0
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)


Splits = tuple[list[Impression], list[Impression], list[Impression]]


def run_experiment(
    log: ClickLog,
    cfg: ExperimentConfig,
    flags: StrategyFlags,
    definition: str,
    seed: int,
    table: LifetimeTable | None = None,
    splits: Splits | None = None,
) -> tuple[TrainingResult, EvalReport, EvalReport]:
    """Train one model and evaluate it on dev and test.

    Returns (training result, dev report, test report), where the reports
    come from the best-dev-AUC checkpoint.  The lifetime table is built from
    the training split unless one is supplied.
    """
    if splits is None:
        splits = split_impressions(log.impressions, cfg.split_fractions)
    train_imps, dev_imps, test_imps = splits
    if table is None:
        table = table_from_split(log, train_imps, cfg)
    featurizer = Featurizer(log, table, definition, cfg.dims, cfg.buckets, cfg.fparams)
    sig = model_signature(
        cfg.dims,
        log.vocab.num_tokens,
        log.vocab.num_topics,
        log.vocab.num_subtopics,
        cfg.buckets,
        flags.age_repr,
    )
    params = init_params(
        cfg.dims,
        log.vocab.num_tokens,
        log.vocab.num_topics,
        log.vocab.num_subtopics,
        cfg.buckets.count,
        flags.age_repr,
        seed=seed,
    )

    def dev_metrics(p: ParamStore) -> dict:
        rep = evaluate(p, featurizer, dev_imps, flags, cfg.fparams, seed, sig)
        return {"dev_auc": rep.auc, "dev_mrr": rep.mrr}

    result = train(
        params,
        featurizer,
        train_imps,
        dev_imps,
        flags,
        cfg.fparams,
        cfg.train,
        seed,
        dev_metrics_fn=dev_metrics,
    )
    dev_report = evaluate(result.best_params, featurizer, dev_imps, flags,
                          cfg.fparams, seed, sig)
    test_report = evaluate(result.best_params, featurizer, test_imps, flags,
                           cfg.fparams, seed, sig)
    return result, dev_report, test_report


def table_from_split(log: ClickLog, train_imps: list[Impression],
                     cfg: ExperimentConfig) -> LifetimeTable:
    """Build the lifetime table from the clicks of one impression subset."""
    sub = _clicks_subset(log, train_imps)
    return build_lifetime_table(
        sub, cfg.quantile_percent, cfg.min_user_topic_clicks, cfg.fixed_lifetime
    )


def _clicks_subset(log: ClickLog, imps: list[Impression]) -> ClickLog:
    from .corpus import ClickEvent

    clicks = []
    for im in imps:
        for nid, label in im.candidates:
            if label == 1:
                pub = log.news[nid].publish_time
                age = None if pub is None else im.time - pub
                clicks.append(ClickEvent(im.user_id, nid, im.time, age))
    return ClickLog(
        news=log.news,
        impressions=imps,
        clicks=clicks,
        vocab=log.vocab,
    )


def ablate(log: ClickLog, cfg: ExperimentConfig, seeds: list[int],
           splits: Splits | None = None) -> list[dict]:
    """Train and evaluate every legal strategy combination with shared seeds.

    Returns one row per combination with per-metric means over the seeds and
    percent gains over the all-off baseline.
    """
    rows: list[dict] = []
    per_flagset: list[dict[str, float]] = []
    for flags in ABLATION_FLAGSETS:
        per_seed = []
        for seed in seeds:
            _res, _dev, test = run_experiment(log, cfg, flags, cfg.definition, seed,
                                              splits=splits)
            per_seed.append(test.metrics_dict())
        means = {k: float(np.mean([m[k] for m in per_seed])) for k in per_seed[0]}
        per_flagset.append(means)
        rows.append({"flags": flags.label, **means})
    base = per_flagset[0]
    for row, means in zip(rows, per_flagset):
        for k in ("auc", "mrr", "ndcg5", "ndcg10"):
            row[f"{k}_gain_pct"] = (
                100.0 * (means[k] - base[k]) / base[k] if base[k] else float("nan")
            )
    return rows


def compare_lifetimes(log: ClickLog, cfg: ExperimentConfig, seeds: list[int],
                      splits: Splits | None = None) -> list[dict]:
    """Full-strategy runs under each lifetime definition, shared seeds."""
    rows = []
    for definition in DEFINITIONS:
        per_seed = []
        for seed in seeds:
            _res, _dev, test = run_experiment(log, cfg, cfg.flags, definition, seed,
                                              splits=splits)
            per_seed.append(test.metrics_dict())
        means = {k: float(np.mean([m[k] for m in per_seed])) for k in per_seed[0]}
        rows.append({"definition": definition, **means})
    return rows


def sweep_freshness(
    params: ParamStore,
    featurizer: Featurizer,
    impressions: list[Impression],
    flags: StrategyFlags,
    alphas: list[float] | None = None,
    betas: list[float] | None = None,
) -> list[dict]:
    """Re-rank a fixed checkpoint under a grid of (alpha, beta) pairs.

    No retraining: base scores and freshness values are computed once, and
    each grid point only changes the multiplicative weight.  Returns one row
    per grid point with MRR and nDCG@5.
    """
    if alphas is None:
        alphas = [round(0.1 * i, 1) for i in range(11)]
    if betas is None:
        betas = [round(0.1 * i, 1) for i in range(11)]
    base_flags = StrategyFlags(flags.age_repr, flags.cand_attention, False)
    cached = []
    for im in impressions:
        feat = featurizer.features(im)
        if not (feat.labels == 1).any() or not (feat.labels == 0).any():
            continue
        base = score_impression(params, feat, base_flags, featurizer.fparams,
                                mode="rank").value
        cached.append((base, feat.cand_freshness, feat.labels))
    rows = []
    for alpha in alphas:
        for beta in betas:
            fp = FreshnessParams(alpha=alpha, beta=beta, unit=featurizer.fparams.unit)
            mrrs = []
            ndcgs = []
            for base, fresh, labels in cached:
                scores = base * freshness_weight(fresh, fp)
                mrrs.append(metrics.mrr(scores, labels))
                ndcgs.append(metrics.ndcg(scores, labels, 5))
            rows.append(
                {
                    "alpha": alpha,
                    "beta": beta,
                    "mrr": float(np.mean(mrrs)),
                    "ndcg5": float(np.mean(ndcgs)),
                }
            )
    return rows


def error_coverage(
    rankings: list[ImpressionRanking],
    featurizer: Featurizer,
) -> dict:
    """In-lifetime fractions of ranking errors.

    Per impression, the top-k candidates (k = number of positives) count as
    predicted clicks.  False negatives are positives outside the top-k;
    false positives are negatives inside it.  Each error is then checked
    against the resolved lifetime of its article for that user at the
    impression time.  Fractions are None when no such errors exist.
    """
    fn_total = fp_total = fn_inside = fp_inside = 0
    for r in rankings:
        labels = np.asarray(r.labels)
        k = int((labels == 1).sum())
        if k == 0 or k == len(labels):
            continue
        order = metrics.rank_order(r.scores)
        top = set(order[:k].tolist())
        for pos_idx in np.flatnonzero(labels == 1):
            if int(pos_idx) not in top:
                fn_total += 1
                if _in_lifetime(r, int(pos_idx), featurizer):
                    fn_inside += 1
        for neg_idx in np.flatnonzero(labels == 0):
            if int(neg_idx) in top:
                fp_total += 1
                if _in_lifetime(r, int(neg_idx), featurizer):
                    fp_inside += 1
    return {
        "fn_count": fn_total,
        "fp_count": fp_total,
        "fn_in_lifetime": fn_inside / fn_total if fn_total else None,
        "fp_in_lifetime": fp_inside / fp_total if fp_total else None,
    }


def _in_lifetime(r: ImpressionRanking, idx: int, featurizer: Featurizer) -> bool:
    nid = r.news_ids[idx]
    age = featurizer.candidate_age(nid, r.time)
    topic = featurizer.log.news[nid].topic_id
    life, _src = featurizer.table.resolve(r.user_id, topic, featurizer.definition)
    return age <= life


def explain(
    impression: Impression,
    params: ParamStore,
    featurizer: Featurizer,
    flags: StrategyFlags,
    fparams: FreshnessParams,
) -> str:
    """Human-readable per-candidate breakdown of one impression's ranking."""
    feat = featurizer.features(impression)
    base_flags = StrategyFlags(flags.age_repr, flags.cand_attention, False)
    base = score_impression(params, feat, base_flags, fparams, mode="rank").value
    weights = freshness_weight(feat.cand_freshness, fparams)
    final = base * weights if flags.fresh_rerank else base
    order = metrics.rank_order(final)
    lines = [
        f"impression {impression.impression_id} user {impression.user_id} "
        f"time {impression.time:.0f}",
        f"history size {feat.history_size}, lifetime definition "
        f"{featurizer.definition}, freshness alpha={fparams.alpha} beta={fparams.beta}",
        "",
        f"{'rank':>4} {'news':>8} {'label':>5} {'base':>10} {'fresh(u)':>9} "
        f"{'weight':>8} {'score':>10} {'life(h)':>8} {'source':>10} verdict",
    ]
    for rank, idx in enumerate(order, start=1):
        i = int(idx)
        verdict = "valid" if feat.cand_freshness[i] >= 0 else "expired"
        lines.append(
            f"{rank:>4} {feat.cand_ids[i]:>8} {int(feat.labels[i]):>5} "
            f"{base[i]:>10.4f} {feat.cand_freshness[i]:>9.2f} "
            f"{weights[i]:>8.4f} {final[i]:>10.4f} "
            f"{feat.cand_lifetimes[i] / 3600.0:>8.2f} "
            f"{feat.cand_life_sources[i]:>10} {verdict}"
        )
    return "\n".join(lines)
