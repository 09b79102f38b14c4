"""Temporal encodings: logarithmic age bucketization and freshness weighting.

Both news ages and lifetimes span several orders of magnitude (minutes to
weeks), so they are mapped to a small set of discrete buckets on a log
scale before being embedded.  Freshness (remaining lifetime of a candidate
article) is squashed through a scaled sigmoid with an extra penalty on the
expired side, producing a multiplicative re-ranking weight in (0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BucketConfig",
    "FreshnessParams",
    "bucketize",
    "freshness",
    "freshness_weight",
]


@dataclass(frozen=True)
class BucketConfig:
    """Log-bucketization grid: `count` buckets covering ages up to `tau` seconds.

    Ages above `tau` clamp into the last bucket; ages below one second share
    bucket 0.
    """

    count: int = 100
    tau: float = 864_000.0  # 10 days

    def __post_init__(self) -> None:
        if self.count < 2:
            raise ValueError(f"bucket count must be >= 2, got {self.count}")
        if self.tau <= 1.0:
            raise ValueError(f"tau must be > 1 second, got {self.tau}")


@dataclass(frozen=True)
class FreshnessParams:
    """Scaling (`alpha`) and expired-penalty (`beta`) factors for re-ranking.

    `unit` converts a remaining lifetime in seconds into the argument fed to
    the sigmoid; the default of 3600 measures freshness in hours, which keeps
    alpha values in [0, 1] on a meaningful slope of the sigmoid.  The closed
    ends of [0, 1] are allowed so sensitivity sweeps can include the
    "weighting disabled" (alpha=0, beta=1) and "hard cutoff" (beta=0) corners.
    """

    alpha: float = 0.3
    beta: float = 0.3
    unit: float = 3600.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.unit <= 0:
            raise ValueError(f"unit must be positive, got {self.unit}")


def bucketize(age_seconds, cfg: BucketConfig):
    """Map a non-negative age (or lifetime) in seconds to a bucket index.

    b = min(floor(log(max(a, 1)) * count / log(tau)), count - 1)

    The ratio of logarithms makes the result independent of the logarithm
    base.  Accepts scalars or arrays; returns the same shape as the input.
    """
    a = np.asarray(age_seconds, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("age must be non-negative")
    b = np.floor(np.log(np.maximum(a, 1.0)) * (cfg.count / math.log(cfg.tau)))
    b = np.minimum(b, cfg.count - 1).astype(np.int64)
    if b.ndim == 0:
        return int(b)
    return b


def freshness(candidate_age_seconds, lifetime_seconds, unit: float = 3600.0):
    """Remaining lifetime of a candidate, in `unit`-sized steps.

    Negative values mean the article outlived the resolved lifetime
    ("expired") at prediction time.
    """
    return (np.asarray(lifetime_seconds, dtype=np.float64) - candidate_age_seconds) / unit


def freshness_weight(f_c, params: FreshnessParams):
    """Scaled sigmoid weight for a freshness value.

        f(F) = sigmoid(alpha * F)           if F >= 0
        f(F) = beta * sigmoid(alpha * F)    if F <  0

    Strictly increasing on each branch; the expired branch is additionally
    scaled down by beta.  Output lies in (0, 1) for beta > 0.
    """
    f = np.asarray(f_c, dtype=np.float64)
    x = params.alpha * f
    # sigmoid evaluated stably on both tails
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    w = np.where(f >= 0, sig, params.beta * sig)
    if w.ndim == 0:
        return float(w)
    return w
