"""Negative sampling, the softmax ranking loss, and the training loop.

Each clicked candidate becomes one training example paired with M unclicked
candidates from the same impression.  The loss is the negative log softmax
probability of the positive among the M+1 scores; epochs run minibatch Adam
with early stopping on validation AUC.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, ParamStore, Tensor
from .corpus import Impression
from .model import Featurizer, StrategyFlags, score_impression
from .temporal import FreshnessParams

__all__ = [
    "TrainExample",
    "TrainConfig",
    "sample_examples",
    "ranking_loss",
    "train",
    "TrainingResult",
]

log = logging.getLogger(__name__)


@dataclass
class TrainExample:
    """One positive candidate plus M same-impression negatives (positive first)."""

    impression: Impression
    candidates: list[tuple[str, int]]


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    negatives: int = 4
    max_epochs: int = 20
    patience: int = 3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    train_freshness: bool = False  # apply the rank-time multiplier during training
    strict_negatives: bool = False  # skip positives lacking M distinct negatives


def sample_examples(
    impressions: list[Impression],
    m: int,
    seed: int,
    strict: bool = False,
) -> tuple[list[TrainExample], int]:
    """One example per clicked candidate, deterministic under the seed.

    Negatives are drawn without replacement from the impression's unclicked
    candidates when at least M are available; impressions offering fewer are
    padded by resampling with replacement, unless `strict`, in which case
    those positives are skipped.  Positives with no negatives at all are
    always skipped.  Returns (examples, skipped_count).
    """
    if m < 1:
        raise ValueError(f"negative count must be >= 1, got {m}")
    rng = np.random.default_rng(seed)
    examples: list[TrainExample] = []
    skipped = 0
    for im in impressions:
        positives = [(nid, lab) for nid, lab in im.candidates if lab == 1]
        negatives = [(nid, lab) for nid, lab in im.candidates if lab == 0]
        for pos in positives:
            if not negatives or (strict and len(negatives) < m):
                skipped += 1
                continue
            if len(negatives) >= m:
                picked_idx = rng.choice(len(negatives), size=m, replace=False)
            else:
                picked_idx = rng.choice(len(negatives), size=m, replace=True)
            picked = [negatives[i] for i in picked_idx]
            examples.append(TrainExample(im, [pos] + picked))
    return examples, skipped


def ranking_loss(scores: Tensor) -> Tensor:
    """-log softmax of the positive (index 0) among the M+1 scores.

    Stabilized by max subtraction; positive everywhere and equal to
    ln(M+1) when all scores tie.  The gradient w.r.t. the positive score is
    softmax_0 - 1, which is never positive.
    """
    values = scores.value
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("ranking_loss: non-finite score")
    shift = float(values.max())
    exps = np.exp(values - shift)
    sm = exps / exps.sum()
    loss_val = math.log(exps.sum()) + shift - float(values[0])

    def bwd(g: np.ndarray) -> None:
        grad = sm.copy()
        grad[0] -= 1.0
        scores.accumulate(g * grad)

    return Tensor(loss_val, (scores,), bwd)


@dataclass
class TrainingResult:
    params: ParamStore
    best_params: ParamStore
    curve: list[dict] = field(default_factory=list)  # per-epoch loss and dev metrics
    best_epoch: int = -1
    best_dev_auc: float = float("nan")
    skipped_examples: int = 0


def _snapshot(store: ParamStore) -> ParamStore:
    copy = ParamStore(seed=store.seed)
    for name, t in store.items():
        copy._register(name, t.value.copy())
    return copy


def train(
    params: ParamStore,
    featurizer: Featurizer,
    train_impressions: list[Impression],
    dev_impressions: list[Impression],
    flags: StrategyFlags,
    fparams: FreshnessParams,
    cfg: TrainConfig,
    seed: int,
    dev_metrics_fn=None,
) -> TrainingResult:
    """Minibatch Adam with per-epoch dev evaluation and patience stopping.

    `dev_metrics_fn(params) -> dict` supplies dev AUC/MRR each epoch (it is
    injected to keep this module free of the evaluation harness).  The
    checkpoint with the best dev AUC is kept; training stops after
    `patience` epochs without improvement or when the loss diverges.
    """
    examples, skipped = sample_examples(
        train_impressions, cfg.negatives, seed, cfg.strict_negatives
    )
    if not examples:
        raise ValueError("no training examples could be sampled")
    rng = np.random.default_rng(seed + 1)
    opt = Adam(params, lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
               eps=cfg.adam_eps)
    mode = "rank" if cfg.train_freshness else "train"

    result = TrainingResult(params=params, best_params=_snapshot(params),
                            skipped_examples=skipped)
    best_auc = -1.0
    epochs_since_best = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(examples))
        total_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            params.zero_grads()
            weight = 1.0 / len(batch)
            for idx in batch:
                ex = examples[idx]
                feat = featurizer.features(ex.impression, ex.candidates)
                scores = score_impression(params, feat, flags, fparams, mode)
                loss = ranking_loss(scores)
                if not math.isfinite(float(loss.value)):
                    raise FloatingPointError(
                        f"training diverged: non-finite loss at epoch {epoch}"
                    )
                total_loss += float(loss.value)
                ad.backward(ad.mul(loss, weight))
            opt.step()
        epoch_loss = total_loss / len(examples)

        row = {"epoch": epoch, "train_loss": epoch_loss}
        if dev_metrics_fn is not None:
            row.update(dev_metrics_fn(params))
        result.curve.append(row)
        dev_auc = row.get("dev_auc")
        log.info("epoch %d loss %.5f dev_auc %s", epoch, epoch_loss,
                 f"{dev_auc:.4f}" if dev_auc is not None else "n/a")

        if dev_auc is not None:
            if dev_auc > best_auc:
                best_auc = dev_auc
                result.best_epoch = epoch
                result.best_dev_auc = dev_auc
                result.best_params = _snapshot(params)
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= cfg.patience:
                    break
    if dev_metrics_fn is None:
        result.best_params = _snapshot(params)
        result.best_epoch = len(result.curve)
    return result


def write_curve(curve: list[dict], path) -> None:
    """Training curve as CSV: epoch, train_loss, dev_auc, dev_mrr."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,dev_auc,dev_mrr\n")
        for row in curve:
            fh.write(
                f"{row['epoch']},{row['train_loss']:.6f},"
                f"{row.get('dev_auc', float('nan')):.6f},"
                f"{row.get('dev_mrr', float('nan')):.6f}\n"
            )
