"""Lifetime-aware news recommendation.

Estimates how long news stays interesting, per topic and per user-topic
pair, from click logs; encodes article age relative to those lifetimes
inside a small neural matcher; and re-ranks candidates by remaining
freshness at prediction time.
"""

from .corpus import ClickLog, Impression, NewsArticle, Vocabulary, load_log
from .lifetimes import LifetimeTable, build_lifetime_table, click_coverage
from .model import Featurizer, ModelDims, StrategyFlags
from .synthgen import GeneratorSpec, generate_log
from .temporal import BucketConfig, FreshnessParams, bucketize, freshness_weight

__version__ = "0.1.0"

__all__ = [
    "ClickLog",
    "Impression",
    "NewsArticle",
    "Vocabulary",
    "load_log",
    "LifetimeTable",
    "build_lifetime_table",
    "click_coverage",
    "Featurizer",
    "ModelDims",
    "StrategyFlags",
    "GeneratorSpec",
    "generate_log",
    "BucketConfig",
    "FreshnessParams",
    "bucketize",
    "freshness_weight",
    "__version__",
]
