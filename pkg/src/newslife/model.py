"""The lifetime-aware interest matcher.

Scoring one candidate against one user runs through five stages:

  1. content encoding: mean of title word embeddings -> dense -> tanh
  2. age encoding: bucketized (age, resolved lifetime) embeddings -> dense
     -> tanh, capturing where the article sits inside the user's typical
     interest window for its topic
  3. fusion: concatenation of content and age vectors (clicked news use the
     age at click, candidates the age at prediction time)
  4. user encoding: optional candidate-aware reweighting of the clicked-news
     vectors by topic affinity with a gated residual, then additive
     attention pooling
  5. scoring: dot(user, candidate), optionally multiplied at ranking time by
     the freshness weight of the candidate's remaining lifetime

Three strategy switches control the temporal machinery: `age_repr` gates
stage 2/3, `cand_attention` gates the reweighting in stage 4 (and requires
`age_repr`), `fresh_rerank` gates the multiplier in stage 5.  With all
three off the model reduces to a plain content matcher.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .corpus import ClickLog, Impression
from .lifetimes import LifetimeTable
from .temporal import BucketConfig, FreshnessParams, bucketize, freshness, freshness_weight

__all__ = [
    "ModelDims",
    "StrategyFlags",
    "ImpressionFeatures",
    "Featurizer",
    "init_params",
    "model_signature",
    "encode_content",
    "encode_age",
    "fuse",
    "embed_topics",
    "candidate_attention",
    "encode_user",
    "score",
    "score_impression",
]


@dataclass(frozen=True)
class ModelDims:
    d_word: int = 300
    d_content: int = 400
    d_bucket: int = 200
    d_age: int = 128
    d_topic: int = 128
    d_attn: int = 128
    title_len: int = 30
    history_len: int = 50

    def fused_dim(self, age_repr: bool) -> int:
        return self.d_content + (self.d_age if age_repr else 0)


@dataclass(frozen=True)
class StrategyFlags:
    """Temporal strategy switches; candidate attention runs on fused
    content-age vectors, so it cannot be enabled without the age
    representation."""

    age_repr: bool = True
    cand_attention: bool = True
    fresh_rerank: bool = True

    def __post_init__(self) -> None:
        if self.cand_attention and not self.age_repr:
            raise ValueError("candidate attention requires the age representation")

    @property
    def label(self) -> str:
        if not (self.age_repr or self.cand_attention or self.fresh_rerank):
            return "base"
        parts = []
        if self.age_repr:
            parts.append("age")
        if self.cand_attention:
            parts.append("attn")
        if self.fresh_rerank:
            parts.append("fresh")
        return "+".join(parts)


#: The six legal switch combinations, in ablation-table order.
ABLATION_FLAGSETS: tuple[StrategyFlags, ...] = (
    StrategyFlags(False, False, False),
    StrategyFlags(True, False, False),
    StrategyFlags(False, False, True),
    StrategyFlags(True, True, False),
    StrategyFlags(True, False, True),
    StrategyFlags(True, True, True),
)


def init_params(
    dims: ModelDims,
    num_tokens: int,
    num_topics: int,
    num_subtopics: int,
    bucket_count: int,
    age_repr: bool,
    seed: int = 0,
) -> ParamStore:
    """Allocate and seed every trainable tensor.

    All tensors exist regardless of the strategy switches (unused ones are
    simply never touched by the graph), except that the fused dimension and
    therefore the gate/pooling shapes depend on `age_repr`.
    """
    store = ParamStore(seed=seed)
    store.add_embedding("word_emb", num_tokens, dims.d_word)
    store.add_embedding("topic_emb", num_topics, dims.d_topic)
    store.add_embedding("subtopic_emb", num_subtopics, dims.d_topic)
    store.add_embedding("age_emb", bucket_count, dims.d_bucket)
    store.add_embedding("life_emb", bucket_count, dims.d_bucket)
    store.add_dense("content", dims.d_content, dims.d_word)
    store.add_dense("age", dims.d_age, 2 * dims.d_bucket)
    store.add_dense("topic", dims.d_topic, 2 * dims.d_topic)
    d_fused = dims.fused_dim(age_repr)
    store.add_dense("gate", d_fused, d_fused, bias=False)
    store.add_dense("user_att", dims.d_attn, d_fused, bias=False)
    store.add_uniform("user_att.v", (dims.d_attn,))
    return store


def model_signature(
    dims: ModelDims,
    num_tokens: int,
    num_topics: int,
    num_subtopics: int,
    buckets: BucketConfig,
    age_repr: bool,
) -> str:
    """Hash of everything that fixes parameter shapes and input encoding."""
    return ad.config_fingerprint(
        {
            "d_word": dims.d_word,
            "d_content": dims.d_content,
            "d_bucket": dims.d_bucket,
            "d_age": dims.d_age,
            "d_topic": dims.d_topic,
            "d_attn": dims.d_attn,
            "title_len": dims.title_len,
            "history_len": dims.history_len,
            "num_tokens": num_tokens,
            "num_topics": num_topics,
            "num_subtopics": num_subtopics,
            "bucket_count": buckets.count,
            "bucket_tau": buckets.tau,
            "age_repr": age_repr,
        }
    )


# ---------------------------------------------------------------------------
# encoder stages
# ---------------------------------------------------------------------------


def _title_mean_weights(tokens: np.ndarray) -> np.ndarray:
    """Per-slot weights averaging the non-padding tokens of each title.

    All-padding titles average every slot uniformly, which reproduces the
    padding embedding itself.
    """
    mask = (tokens != 0).astype(np.float64)
    counts = mask.sum(axis=-1, keepdims=True)
    uniform = np.full_like(mask, 1.0 / tokens.shape[-1])
    return np.where(counts > 0, mask / np.maximum(counts, 1.0), uniform)


def encode_content(params: ParamStore, tokens: np.ndarray) -> Tensor:
    """Title tokens (..., T) -> content vectors (..., d_content)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    emb = ad.lookup(params["word_emb"], tokens)  # (..., T, d_word)
    w = _title_mean_weights(tokens)[..., None]
    mean = ad.tsum(ad.mul(emb, w), axis=-2)
    return ad.tanh(ad.dense(mean, params["content.w"], params["content.b"]))


def encode_age(params: ParamStore, age_buckets: np.ndarray, life_buckets: np.ndarray) -> Tensor:
    """Bucketized (age, lifetime) pairs -> relative-age vectors (..., d_age)."""
    ea = ad.lookup(params["age_emb"], age_buckets)
    el = ad.lookup(params["life_emb"], life_buckets)
    both = ad.concat([ea, el], axis=-1)
    return ad.tanh(ad.dense(both, params["age.w"], params["age.b"]))


def fuse(content: Tensor, age: Tensor | None, age_repr: bool) -> Tensor:
    """Concatenate content and age vectors, or pass content through."""
    if not age_repr:
        return content
    if age is None:
        raise ValueError("age representation enabled but no age vector given")
    return ad.concat([content, age], axis=-1)


def embed_topics(params: ParamStore, topic_ids: np.ndarray, subtopic_ids: np.ndarray) -> Tensor:
    """Joint topic+subtopic projection shared by clicked and candidate news."""
    c = ad.lookup(params["topic_emb"], topic_ids)
    s = ad.lookup(params["subtopic_emb"], subtopic_ids)
    return ad.dense(ad.concat([c, s], axis=-1), params["topic.w"], params["topic.b"])


def candidate_attention(
    params: ParamStore,
    hist_fused: Tensor,
    hist_topics: Tensor,
    cand_topic: Tensor,
    enabled: bool = True,
) -> Tensor:
    """Reweight clicked-news vectors by topic affinity to one candidate.

    hist_fused (N, d) and hist_topics (N, d_t) describe the history;
    cand_topic is (d_t,) for a single candidate or (K, d_t) for a batch.
    Attention weights are a softmax over candidate-history topic dot
    products; a sigmoid gate interpolates each reweighted vector with its
    original, so the output always lies between the two.  Returns (N, d)
    for a single candidate, (K, N, d) for a batch; disabled, it returns
    hist_fused unchanged.
    """
    if not enabled:
        return hist_fused
    single = cand_topic.value.ndim == 1
    n = hist_fused.value.shape[0]
    d_t = hist_topics.value.shape[-1]
    tc = ad.reshape(cand_topic, (1, d_t)) if single else cand_topic
    k = tc.value.shape[0]
    scores = ad.dot(ad.reshape(tc, (k, 1, d_t)), ad.reshape(hist_topics, (1, n, d_t)))
    alpha = ad.softmax(scores, axis=-1)  # (K, N)
    gate = ad.sigmoid(ad.dense(hist_fused, params["gate.w"]))  # (N, d)
    weighted = ad.mul(ad.reshape(alpha, (k, n, 1)), hist_fused)  # (K, N, d)
    out = ad.add(ad.mul(gate, weighted), ad.mul(ad.sub(1.0, gate), hist_fused))
    if single:
        out = ad.reshape(out, (n, hist_fused.value.shape[-1]))
    return out


def encode_user(params: ParamStore, clicked: Tensor) -> Tensor:
    """Additive-attention pooling of clicked-news vectors over axis -2."""
    hidden = ad.tanh(ad.dense(clicked, params["user_att.w"]))
    scores = ad.dot(hidden, params["user_att.v"])  # (..., N)
    weights = ad.softmax(scores, axis=-1)
    return ad.tsum(ad.mul(ad.reshape(weights, weights.value.shape + (1,)), clicked), axis=-2)


def score(
    user: Tensor,
    cand_fused: Tensor,
    f_c,
    fparams: FreshnessParams,
    flags: StrategyFlags,
    mode: str = "rank",
) -> Tensor:
    """Interest score: dot(user, candidate), freshness-weighted at rank time.

    The freshness multiplier applies only when `mode == "rank"` and the
    re-ranking switch is on; training optimizes the raw dot product.
    """
    if mode not in ("train", "rank"):
        raise ValueError(f"mode must be train or rank, got {mode!r}")
    base = ad.dot(user, cand_fused)
    if mode == "rank" and flags.fresh_rerank:
        return ad.mul(base, freshness_weight(np.asarray(f_c, dtype=np.float64), fparams))
    return base


# ---------------------------------------------------------------------------
# featurization
# ---------------------------------------------------------------------------


@dataclass
class ImpressionFeatures:
    """Index arrays for one impression (or one sampled training example)."""

    user_id: str
    time: float
    hist_tokens: np.ndarray  # (N, T) int
    hist_topics: np.ndarray  # (N,)
    hist_subtopics: np.ndarray  # (N,)
    hist_age_buckets: np.ndarray  # (N,)
    hist_life_buckets: np.ndarray  # (N,)
    cand_ids: list[str]
    cand_tokens: np.ndarray  # (K, T)
    cand_topics: np.ndarray  # (K,)
    cand_subtopics: np.ndarray  # (K,)
    cand_age_buckets: np.ndarray  # (K,)
    cand_life_buckets: np.ndarray  # (K,)
    cand_ages: np.ndarray  # (K,) seconds
    cand_lifetimes: np.ndarray  # (K,) seconds
    cand_life_sources: list[str]
    cand_freshness: np.ndarray  # (K,) in freshness units
    labels: np.ndarray  # (K,) int

    @property
    def history_size(self) -> int:
        return self.hist_tokens.shape[0]


class Featurizer:
    """Turns impressions into model-ready index arrays.

    Clicked-news ages come from the user's recorded click times: the most
    recent click at or before the impression resolves the age; history
    entries without any recorded click (histories predating the log) fall
    back to the article's age at the impression time.  Lifetimes resolve
    through the table's fallback chain under the configured definition.
    """

    def __init__(
        self,
        log: ClickLog,
        table: LifetimeTable,
        definition: str,
        dims: ModelDims,
        buckets: BucketConfig,
        fparams: FreshnessParams,
    ):
        self.log = log
        self.table = table
        self.definition = definition
        self.dims = dims
        self.buckets = buckets
        self.fparams = fparams
        self._click_times: dict[tuple[str, str], list[float]] = {}
        for c in log.clicks:
            self._click_times.setdefault((c.user_id, c.news_id), []).append(c.click_time)
        for times in self._click_times.values():
            times.sort()

    def click_age(self, user_id: str, news_id: str, at_time: float) -> float:
        pub = self.log.news[news_id].publish_time
        if pub is None:
            return 0.0
        times = self._click_times.get((user_id, news_id))
        if times:
            i = bisect.bisect_right(times, at_time)
            if i > 0:
                return times[i - 1] - pub
        return max(at_time - pub, 0.0)

    def candidate_age(self, news_id: str, at_time: float) -> float:
        pub = self.log.news[news_id].publish_time
        if pub is None:
            return 0.0
        return max(at_time - pub, 0.0)

    def features(
        self,
        impression: Impression,
        candidates: list[tuple[str, int]] | None = None,
    ) -> ImpressionFeatures:
        """Featurize an impression, optionally restricted to given candidates."""
        cands = list(impression.candidates) if candidates is None else candidates
        news = self.log.news
        dims = self.dims
        t = impression.time

        hist_ids = list(impression.history)[-dims.history_len :]
        n = len(hist_ids)
        hist_tokens = np.zeros((n, dims.title_len), dtype=np.int64)
        hist_topics = np.zeros(n, dtype=np.int64)
        hist_subtopics = np.zeros(n, dtype=np.int64)
        hist_ages = np.zeros(n)
        hist_lives = np.zeros(n)
        for i, nid in enumerate(hist_ids):
            art = news[nid]
            hist_tokens[i] = art.title_tokens[: dims.title_len]
            hist_topics[i] = art.topic_id
            hist_subtopics[i] = art.subtopic_id
            hist_ages[i] = self.click_age(impression.user_id, nid, t)
            hist_lives[i], _ = self.table.resolve(
                impression.user_id, art.topic_id, self.definition
            )

        k = len(cands)
        cand_tokens = np.zeros((k, dims.title_len), dtype=np.int64)
        cand_topics = np.zeros(k, dtype=np.int64)
        cand_subtopics = np.zeros(k, dtype=np.int64)
        cand_ages = np.zeros(k)
        cand_lives = np.zeros(k)
        cand_sources = []
        labels = np.zeros(k, dtype=np.int64)
        for j, (nid, label) in enumerate(cands):
            art = news[nid]
            cand_tokens[j] = art.title_tokens[: dims.title_len]
            cand_topics[j] = art.topic_id
            cand_subtopics[j] = art.subtopic_id
            cand_ages[j] = self.candidate_age(nid, t)
            life, src = self.table.resolve(impression.user_id, art.topic_id, self.definition)
            cand_lives[j] = life
            cand_sources.append(src)
            labels[j] = label

        return ImpressionFeatures(
            user_id=impression.user_id,
            time=t,
            hist_tokens=hist_tokens,
            hist_topics=hist_topics,
            hist_subtopics=hist_subtopics,
            hist_age_buckets=np.asarray(bucketize(hist_ages, self.buckets)).reshape(n),
            hist_life_buckets=np.asarray(bucketize(hist_lives, self.buckets)).reshape(n),
            cand_ids=[nid for nid, _ in cands],
            cand_tokens=cand_tokens,
            cand_topics=cand_topics,
            cand_subtopics=cand_subtopics,
            cand_age_buckets=np.asarray(bucketize(cand_ages, self.buckets)).reshape(k),
            cand_life_buckets=np.asarray(bucketize(cand_lives, self.buckets)).reshape(k),
            cand_ages=cand_ages,
            cand_lifetimes=cand_lives,
            cand_life_sources=cand_sources,
            cand_freshness=np.asarray(
                freshness(cand_ages, cand_lives, self.fparams.unit)
            ).reshape(k),
            labels=labels,
        )


def score_impression(
    params: ParamStore,
    feat: ImpressionFeatures,
    flags: StrategyFlags,
    fparams: FreshnessParams,
    mode: str = "rank",
) -> Tensor:
    """Score every candidate of a featurized impression; returns a (K,) tensor.

    Users with an empty history get a zero user vector, so all their scores
    are zero in train mode and freshness-ordered in rank mode is moot
    (zero stays zero under any positive multiplier).
    """
    k = len(feat.cand_ids)
    cand_content = encode_content(params, feat.cand_tokens)
    cand_age = (
        encode_age(params, feat.cand_age_buckets, feat.cand_life_buckets)
        if flags.age_repr
        else None
    )
    cand_fused = fuse(cand_content, cand_age, flags.age_repr)  # (K, d)

    if feat.history_size == 0:
        return Tensor(np.zeros(k))

    hist_content = encode_content(params, feat.hist_tokens)
    hist_age = (
        encode_age(params, feat.hist_age_buckets, feat.hist_life_buckets)
        if flags.age_repr
        else None
    )
    hist_fused = fuse(hist_content, hist_age, flags.age_repr)  # (N, d)

    if flags.cand_attention:
        hist_topic_vecs = embed_topics(params, feat.hist_topics, feat.hist_subtopics)
        cand_topic_vecs = embed_topics(params, feat.cand_topics, feat.cand_subtopics)
        clicked = candidate_attention(params, hist_fused, hist_topic_vecs, cand_topic_vecs)
        user = encode_user(params, clicked)  # (K, d)
    else:
        user = encode_user(params, hist_fused)  # (d,)

    return score(user, cand_fused, feat.cand_freshness, fparams, flags, mode)
