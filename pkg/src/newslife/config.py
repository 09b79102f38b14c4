"""Run configuration: a flat `key = value` text format with sections.

Every command takes one config file; unknown keys are hard errors that list
the valid keys for the section.  The verbatim file text is hashed and
carried into every report and manifest so any artifact can be traced back
to the exact configuration that produced it.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .harness import ExperimentConfig
from .model import ModelDims, StrategyFlags
from .synthgen import GeneratorSpec
from .temporal import BucketConfig, FreshnessParams
from .training import TrainConfig

__all__ = ["RunConfig", "DataConfig", "parse_config", "ConfigError"]


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    news: str = ""
    behaviors: str = ""
    behaviors_train: str = ""
    behaviors_dev: str = ""
    behaviors_test: str = ""
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    title_len: int = 30
    history_len: int = 50

    @property
    def provided_splits(self) -> bool:
        return bool(self.behaviors_train or self.behaviors_dev or self.behaviors_test)


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    data: DataConfig = field(default_factory=DataConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    synth: GeneratorSpec | None = None
    text: str = ""
    config_hash: str = ""


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_fractions(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(","))


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(","))


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(","))


# section -> key -> parser
_SCHEMA: dict[str, dict[str, object]] = {
    "run": {"seed": int, "threads": int, "seeds": _parse_ints},
    "data": {
        "news": str,
        "behaviors": str,
        "behaviors_train": str,
        "behaviors_dev": str,
        "behaviors_test": str,
        "split_fractions": _parse_fractions,
        "title_len": int,
        "history_len": int,
    },
    "lifetime": {
        "definition": str,
        "quantile_percent": float,
        "min_user_topic_clicks": int,
        "fixed_hours": float,
    },
    "buckets": {"count": int, "tau_seconds": float},
    "freshness": {"alpha": float, "beta": float, "unit_seconds": float},
    "model": {
        "d_word": int,
        "d_content": int,
        "d_bucket": int,
        "d_age": int,
        "d_topic": int,
        "d_attn": int,
        "age_repr": _parse_bool,
        "cand_attention": _parse_bool,
        "fresh_rerank": _parse_bool,
    },
    "train": {
        "lr": float,
        "batch_size": int,
        "negatives": int,
        "max_epochs": int,
        "patience": int,
        "train_freshness": _parse_bool,
        "strict_negatives": _parse_bool,
    },
    "synth": {
        "seed": int,
        "num_users": int,
        "num_topics": int,
        "subtopics_per_topic": int,
        "news_per_topic": int,
        "vocab_size": int,
        "base_lifetimes_hours": _parse_floats,
        "min_base_lifetime_hours": float,
        "max_base_lifetime_hours": float,
        "multiplier_sigma": float,
        "multiplier_choices": _parse_floats,
        "topics_per_user": int,
        "clicks_per_user": int,
        "impression_size": int,
        "expired_negative_fraction": float,
        "horizon_days": float,
        "title_tokens": int,
        "shared_token_fraction": float,
        "truncation_multiple": float,
        "uniform_negatives": _parse_bool,
    },
}


def _read_section(cp: configparser.ConfigParser, name: str) -> dict:
    if not cp.has_section(name):
        return {}
    schema = _SCHEMA[name]
    out = {}
    for key, raw in cp.items(name):
        if key not in schema:
            valid = ", ".join(sorted(schema))
            raise ConfigError(
                f"unknown key {key!r} in section [{name}]; valid keys: {valid}"
            )
        try:
            out[key] = schema[key](raw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for [{name}] {key}: {raw!r}") from exc
    return out


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    return parse_config_text(text)


def parse_config_text(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(
                f"unknown section [{section}]; valid sections: "
                + ", ".join(sorted(_SCHEMA))
            )

    run = _read_section(cp, "run")
    data_kv = _read_section(cp, "data")
    life = _read_section(cp, "lifetime")
    buckets_kv = _read_section(cp, "buckets")
    fresh_kv = _read_section(cp, "freshness")
    model_kv = _read_section(cp, "model")
    train_kv = _read_section(cp, "train")
    synth_kv = _read_section(cp, "synth")

    data = DataConfig(**data_kv)
    if abs(sum(data.split_fractions) - 1.0) > 1e-9 or len(data.split_fractions) != 3:
        raise ConfigError(
            f"split_fractions must be 3 values summing to 1, got {data.split_fractions}"
        )

    dims = ModelDims(
        d_word=model_kv.get("d_word", 300),
        d_content=model_kv.get("d_content", 400),
        d_bucket=model_kv.get("d_bucket", 200),
        d_age=model_kv.get("d_age", 128),
        d_topic=model_kv.get("d_topic", 128),
        d_attn=model_kv.get("d_attn", 128),
        title_len=data.title_len,
        history_len=data.history_len,
    )
    flags = StrategyFlags(
        age_repr=model_kv.get("age_repr", True),
        cand_attention=model_kv.get("cand_attention", True),
        fresh_rerank=model_kv.get("fresh_rerank", True),
    )
    buckets = BucketConfig(
        count=buckets_kv.get("count", 100),
        tau=buckets_kv.get("tau_seconds", 864000.0),
    )
    fparams = FreshnessParams(
        alpha=fresh_kv.get("alpha", 0.3),
        beta=fresh_kv.get("beta", 0.3),
        unit=fresh_kv.get("unit_seconds", 3600.0),
    )
    train_cfg = TrainConfig(
        lr=train_kv.get("lr", 1e-3),
        batch_size=train_kv.get("batch_size", 32),
        negatives=train_kv.get("negatives", 4),
        max_epochs=train_kv.get("max_epochs", 20),
        patience=train_kv.get("patience", 3),
        train_freshness=train_kv.get("train_freshness", False),
        strict_negatives=train_kv.get("strict_negatives", False),
    )
    definition = life.get("definition", "user-topic")
    if definition not in ("fixed", "topic", "user-topic"):
        raise ConfigError(f"unknown lifetime definition {definition!r}")
    experiment = ExperimentConfig(
        dims=dims,
        buckets=buckets,
        fparams=fparams,
        flags=flags,
        train=train_cfg,
        definition=definition,
        quantile_percent=life.get("quantile_percent", 90.0),
        min_user_topic_clicks=life.get("min_user_topic_clicks", 3),
        fixed_lifetime=life.get("fixed_hours", 36.0) * 3600.0,
        split_fractions=tuple(data.split_fractions),
    )

    synth = None
    if synth_kv:
        kw = dict(synth_kv)
        if "base_lifetimes_hours" in kw:
            kw["base_lifetimes"] = tuple(h * 3600.0 for h in kw.pop("base_lifetimes_hours"))
        if "min_base_lifetime_hours" in kw:
            kw["min_base_lifetime"] = kw.pop("min_base_lifetime_hours") * 3600.0
        if "max_base_lifetime_hours" in kw:
            kw["max_base_lifetime"] = kw.pop("max_base_lifetime_hours") * 3600.0
        if "horizon_days" in kw:
            kw["horizon"] = kw.pop("horizon_days") * 86400.0
        if "multiplier_choices" in kw:
            kw["multiplier_choices"] = tuple(kw["multiplier_choices"])
        kw.setdefault("m_percent", experiment.quantile_percent)
        synth = GeneratorSpec(**kw)

    return RunConfig(
        seed=run.get("seed", 0),
        threads=run.get("threads", 1),
        seeds=tuple(run.get("seeds", (0, 1, 2, 3, 4))),
        data=data,
        experiment=experiment,
        synth=synth,
        text=text,
        config_hash=hashlib.sha256(text.encode("utf-8")).hexdigest()[:16],
    )
