"""Synthetic click-log generator with planted, recoverable lifetimes.

Every user-topic pair gets a planted lifetime L(u, t) = base_lifetime(t) *
multiplier(u).  Click ages for that pair are drawn from an exponential
distribution truncated at `truncation_multiple * L` whose rate is solved so
the m-th percentile of the distribution equals L exactly: the quantile
estimator applied to enough generated clicks must therefore recover the
planted value.  Titles are sampled from topic-specific token pools, so
content carries the topic signal; unclicked candidates mix expired
same-topic articles (content looks right, freshness does not) with articles
from topics the user does not follow (content looks wrong), which makes the
temporal strategies measurably useful.

Publish times are not written anywhere explicitly; instead every article
debuts as an unclicked candidate in a feed impression at its publish time,
so the first-impression-time derivation recovers publish times exactly.  No
article ever appears in an impression predating its publish time.

Output uses the exact corpus TSV formats plus the lifetime-table export
format for the ground truth.  Generation is deterministic under the spec
seed, with per-user and per-impression derived substreams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .corpus import ClickLog, load_log
from .lifetimes import LifetimeTable

__all__ = ["GeneratorSpec", "write_dataset", "generate_log", "read_truth"]

FEED_USER = "FEED"


@dataclass
class GeneratorSpec:
    seed: int = 0
    num_users: int = 20
    num_topics: int = 4
    subtopics_per_topic: int = 2
    news_per_topic: int = 40
    vocab_size: int = 200
    base_lifetimes: tuple[float, ...] | None = None  # seconds per topic
    min_base_lifetime: float = 2 * 3600.0
    max_base_lifetime: float = 32 * 3600.0
    multiplier_sigma: float = 0.0  # log-normal sigma of the per-user multiplier
    multiplier_choices: tuple[float, ...] | None = None  # cycled overrides
    topics_per_user: int = 2
    affinity: np.ndarray | None = None  # (users, topics), rows sum to 1
    clicks_per_user: int = 50
    impression_size: int = 5
    expired_negative_fraction: float = 0.5
    horizon: float = 14 * 86400.0
    title_tokens: int = 8
    shared_token_fraction: float = 0.2
    m_percent: float = 90.0
    truncation_multiple: float = 1.15
    # uniform_negatives makes labels carry no content or freshness signal:
    # negatives are drawn uniformly from everything published so far
    uniform_negatives: bool = False

    def resolved_base_lifetimes(self) -> np.ndarray:
        if self.base_lifetimes is not None:
            if len(self.base_lifetimes) != self.num_topics:
                raise ValueError("base_lifetimes length must equal num_topics")
            return np.asarray(self.base_lifetimes, dtype=np.float64)
        if self.num_topics == 1:
            return np.array([self.min_base_lifetime])
        return np.exp(
            np.linspace(
                math.log(self.min_base_lifetime),
                math.log(self.max_base_lifetime),
                self.num_topics,
            )
        )


def _quantile_rate_factor(q: float, kappa: float) -> float:
    """Solve y so that a rate-(y/L) exponential truncated at kappa*L has its
    q-quantile exactly at L: (1 - e^-y) = q * (1 - e^-(kappa*y))."""
    if not 0 < q < 1:
        raise ValueError("quantile must be in (0, 1)")
    if kappa * q <= 1.0:
        raise ValueError(
            f"truncation multiple {kappa} too small for quantile {q} "
            f"(needs kappa > 1/q)"
        )
    f = lambda y: (1.0 - math.exp(-y)) - q * (1.0 - math.exp(-kappa * y))
    return brentq(f, 1e-9, 50.0)


def _sample_truncated_exp(rng, rate: float, cap: float, size: int) -> np.ndarray:
    u = rng.random(size)
    return -np.log1p(-u * (1.0 - math.exp(-rate * cap))) / rate


@dataclass
class _Click:
    user: int
    news: int
    time: int
    topic: int


def _build_affinity(spec: GeneratorSpec, rng) -> np.ndarray:
    if spec.affinity is not None:
        aff = np.asarray(spec.affinity, dtype=np.float64)
        if aff.shape != (spec.num_users, spec.num_topics):
            raise ValueError("affinity must be (num_users, num_topics)")
        if not np.allclose(aff.sum(axis=1), 1.0):
            raise ValueError("affinity rows must sum to 1")
        return aff
    k = min(spec.topics_per_user, spec.num_topics)
    aff = np.zeros((spec.num_users, spec.num_topics))
    for u in range(spec.num_users):
        chosen = rng.choice(spec.num_topics, size=k, replace=False)
        weights = rng.dirichlet(np.full(k, 2.0))
        aff[u, chosen] = weights
    return aff


def _multipliers(spec: GeneratorSpec, rng) -> np.ndarray:
    if spec.multiplier_choices is not None:
        reps = [spec.multiplier_choices[u % len(spec.multiplier_choices)]
                for u in range(spec.num_users)]
        return np.asarray(reps, dtype=np.float64)
    if spec.multiplier_sigma == 0.0:
        return np.ones(spec.num_users)
    return rng.lognormal(mean=0.0, sigma=spec.multiplier_sigma, size=spec.num_users)


def _make_articles(spec: GeneratorSpec, rng):
    """Titles from topic token pools, plus topic/subtopic/publish metadata."""
    n_shared = max(1, int(spec.vocab_size * spec.shared_token_fraction))
    per_topic = max(1, (spec.vocab_size - n_shared) // spec.num_topics)
    titles: list[str] = []
    topics: list[int] = []
    subtopics: list[int] = []
    publish: list[int] = []
    for t in range(spec.num_topics):
        pool_start = n_shared + t * per_topic
        for _ in range(spec.news_per_topic):
            words = []
            for _ in range(spec.title_tokens):
                if rng.random() < spec.shared_token_fraction:
                    words.append(f"w{rng.integers(0, n_shared)}")
                else:
                    words.append(f"w{pool_start + rng.integers(0, per_topic)}")
            titles.append(" ".join(words))
            topics.append(t)
            subtopics.append(int(rng.integers(0, spec.subtopics_per_topic)))
            publish.append(int(rng.integers(0, int(spec.horizon))))
    return titles, topics, subtopics, publish


def write_dataset(spec: GeneratorSpec, out_dir: str | Path) -> dict[str, Path]:
    """Generate and write news.tsv, behaviors.tsv, and truth.tsv.

    Returns the paths keyed by artifact name.  Raises on infeasible specs
    (horizon shorter than the largest planted lifetime).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    base = spec.resolved_base_lifetimes()
    mult = _multipliers(spec, rng)
    planted = np.outer(mult, base)  # (users, topics)
    if planted.max() > spec.horizon:
        raise ValueError(
            f"infeasible spec: max planted lifetime {planted.max():.0f}s "
            f"exceeds horizon {spec.horizon:.0f}s"
        )
    affinity = _build_affinity(spec, rng)
    titles, topics, subtopics, publish = _make_articles(spec, rng)
    n_news = len(titles)
    by_topic = [
        np.array([i for i in range(n_news) if topics[i] == t])
        for t in range(spec.num_topics)
    ]
    publish_arr = np.asarray(publish, dtype=np.float64)

    y = _quantile_rate_factor(spec.m_percent / 100.0, spec.truncation_multiple)

    clicks: list[_Click] = []
    for u in range(spec.num_users):
        rng_u = np.random.default_rng([spec.seed, 1000 + u])
        topic_draws = rng_u.choice(spec.num_topics, size=spec.clicks_per_user,
                                   p=affinity[u])
        for t in topic_draws:
            art = int(rng_u.choice(by_topic[t]))
            life = planted[u, t]
            rate = y / life
            age = float(
                _sample_truncated_exp(rng_u, rate, spec.truncation_multiple * life, 1)[0]
            )
            clicks.append(_Click(u, art, int(publish[art] + round(age)), int(t)))

    clicks.sort(key=lambda c: (c.time, c.user, c.news))

    # one row per impression: (time, kind, user_label, history, candidates)
    rows: list[tuple[int, int, str, str, str]] = []
    for art in range(n_news):
        rows.append((publish[art], 0, FEED_USER, "", f"N{art:05d}-0"))

    n_neg = spec.impression_size - 1
    user_history: dict[int, list[int]] = {u: [] for u in range(spec.num_users)}
    off_topic_pool = [
        np.concatenate([by_topic[x] for x in range(spec.num_topics) if affinity[u, x] == 0.0])
        if (affinity[u] == 0.0).any()
        else np.array([], dtype=np.int64)
        for u in range(spec.num_users)
    ]
    all_news = np.arange(n_news)
    for seq, click in enumerate(clicks):
        u, t, now = click.user, click.topic, click.time
        rng_i = np.random.default_rng([spec.seed, 2_000_000 + seq])
        if spec.uniform_negatives:
            pool = all_news[(publish_arr <= now) & (all_news != click.news)]
            take = min(n_neg, pool.size)
            negs = [int(i) for i in rng_i.choice(pool, size=take, replace=False)]
            _emit_row(rows, user_history, spec, rng_i, click, negs)
            continue
        same = by_topic[t]
        ages_now = now - publish_arr[same]
        expired_pool = same[(ages_now > planted[u, t]) & (same != click.news)]

        off_pool = off_topic_pool[u]
        if off_pool.size == 0:
            off_pool = np.concatenate(
                [by_topic[x] for x in range(spec.num_topics) if x != t]
            )
        off_pool = off_pool[publish_arr[off_pool] <= now]

        want_expired = min(int(round(n_neg * spec.expired_negative_fraction)),
                           expired_pool.size)
        negs: list[int] = []
        if want_expired > 0:
            negs.extend(
                int(i)
                for i in rng_i.choice(expired_pool, size=want_expired, replace=False)
            )
        remaining = n_neg - len(negs)
        if remaining > 0 and off_pool.size > 0:
            take = min(remaining, off_pool.size)
            negs.extend(int(i) for i in rng_i.choice(off_pool, size=take, replace=False))
            remaining -= take
        if remaining > 0:
            # fall back to fresh same-topic articles already published
            fresh = same[(publish_arr[same] <= now) & (same != click.news)]
            fresh = np.array([i for i in fresh if i not in negs])
            if fresh.size > 0:
                take = min(remaining, fresh.size)
                negs.extend(int(i) for i in rng_i.choice(fresh, size=take, replace=False))
        _emit_row(rows, user_history, spec, rng_i, click, negs)

    rows.sort(key=lambda r: (r[0], r[1], r[2], r[4]))
    behaviors_rows = [
        f"I{i:06d}\t{user}\t{time}\t{hist}\t{cands}"
        for i, (time, _kind, user, hist, cands) in enumerate(rows)
    ]
    return _finish_dataset(out_dir, spec, titles, topics, subtopics, n_news,
                           behaviors_rows, planted, clicks)


def _emit_row(rows, user_history, spec: GeneratorSpec, rng_i, click: _Click,
              negs: list[int]) -> None:
    u = click.user
    hist = " ".join(f"N{nid:05d}" for nid in user_history[u][-50:])
    cand_entries = [f"N{click.news:05d}-1"] + [f"N{nid:05d}-0" for nid in negs]
    order = rng_i.permutation(len(cand_entries))
    cands = " ".join(cand_entries[i] for i in order)
    rows.append((click.time, 1, f"U{u:04d}", hist, cands))
    user_history[u].append(click.news)


def _finish_dataset(out_dir: Path, spec: GeneratorSpec, titles, topics, subtopics,
                    n_news: int, behaviors_rows: list[str], planted: np.ndarray,
                    clicks: list[_Click]) -> dict[str, Path]:

    news_path = out_dir / "news.tsv"
    with news_path.open("w", encoding="utf-8") as fh:
        for i in range(n_news):
            fh.write(
                f"N{i:05d}\ttopic{topics[i]}\ttopic{topics[i]}_s{subtopics[i]}\t{titles[i]}\n"
            )
    behaviors_path = out_dir / "behaviors.tsv"
    behaviors_path.write_text("\n".join(behaviors_rows) + "\n", encoding="utf-8")

    truth_path = out_dir / "truth.tsv"
    _write_truth(truth_path, spec, planted, clicks)
    return {"news": news_path, "behaviors": behaviors_path, "truth": truth_path}


def _write_truth(path: Path, spec: GeneratorSpec, planted: np.ndarray,
                 clicks: list[_Click]) -> None:
    """Planted lifetimes in the lifetime-table export format.

    User-topic entries are exact distributional quantiles; topic and fixed
    entries are click-weighted means of the planted values, the natural
    group-level summary of a heterogeneous population.
    """
    pair_clicks: dict[tuple[int, int], int] = {}
    topic_sum: dict[int, float] = {}
    topic_cnt: dict[int, int] = {}
    total = 0.0
    for c in clicks:
        pair_clicks[(c.user, c.topic)] = pair_clicks.get((c.user, c.topic), 0) + 1
        topic_sum[c.topic] = topic_sum.get(c.topic, 0.0) + float(planted[c.user, c.topic])
        topic_cnt[c.topic] = topic_cnt.get(c.topic, 0) + 1
        total += float(planted[c.user, c.topic])
    with path.open("w", encoding="utf-8") as fh:
        fixed = total / len(clicks) if clicks else spec.min_base_lifetime
        fh.write(f"fixed\t-\t{fixed!r}\t0\n")
        for t in sorted(topic_sum):
            fh.write(f"topic\t{t}\t{topic_sum[t] / topic_cnt[t]!r}\t{topic_cnt[t]}\n")
        for (u, t) in sorted(pair_clicks):
            fh.write(
                f"usertopic\tU{u:04d}|{t}\t{float(planted[u, t])!r}\t{pair_clicks[(u, t)]}\n"
            )


def read_truth(path: str | Path, log: ClickLog, m: float) -> LifetimeTable:
    """Load a truth file, mapping generator topic indices to vocab topic ids."""
    table = LifetimeTable(m=m)
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            kind, key, seconds_s, support_s = line.split("\t")
            seconds, support = float(seconds_s), int(support_s)
            if kind == "fixed":
                table.fixed_lifetime = seconds
            elif kind == "topic":
                tid = log.vocab.topics[f"topic{key}"]
                table.topic_lifetime[tid] = seconds
                table.topic_support[tid] = support
            else:
                uid, _, t = key.rpartition("|")
                tid = log.vocab.topics[f"topic{t}"]
                table.user_topic_lifetime[(uid, tid)] = seconds
                table.user_topic_support[(uid, tid)] = support
    return table


def generate_log(
    spec: GeneratorSpec,
    out_dir: str | Path,
    title_len: int = 30,
    history_len: int = 50,
) -> tuple[ClickLog, LifetimeTable]:
    """Write a dataset and parse it back through the corpus loaders."""
    paths = write_dataset(spec, out_dir)
    log = load_log(paths["news"], paths["behaviors"],
                   title_len=title_len, history_len=history_len)
    truth = read_truth(paths["truth"], log, spec.m_percent)
    return log, truth
