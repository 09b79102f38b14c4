"""Click-log corpus: parsing, validation, publish-time derivation, splits.

File formats (UTF-8, tab-separated, one record per line):

  news.tsv        news_id \\t topic \\t subtopic \\t title [\\t extra ignored]
  behaviors.tsv   impression_id \\t user_id \\t unix_seconds \\t history \\t candidates

`history` is a space-separated list of news ids (may be empty); `candidates`
is a space-separated list of `newsid-0` / `newsid-1` entries.  Publish times
are not part of the input: the first time an article appears in any
impression (as a candidate or in a history list) is treated as its publish
time, and the impression time of a clicked article is its click time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

__all__ = [
    "NewsArticle",
    "Impression",
    "ClickEvent",
    "Vocabulary",
    "ClickLog",
    "ParseError",
    "tokenize",
    "load_news",
    "load_behaviors",
    "derive_publish_times",
    "load_log",
    "split_impressions",
    "write_news",
    "write_behaviors",
]

PAD_INDEX = 0
DEFAULT_TITLE_LEN = 30
DEFAULT_HISTORY_LEN = 50

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class ParseError(ValueError):
    """Malformed input file; message carries the file path and line number."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    """Deterministic token/topic/subtopic index maps; index 0 is padding."""

    tokens: dict[str, int] = field(default_factory=dict)
    topics: dict[str, int] = field(default_factory=dict)
    subtopics: dict[str, int] = field(default_factory=dict)
    token_counts: dict[str, int] = field(default_factory=dict)

    def add_token(self, tok: str) -> int:
        idx = self.tokens.get(tok)
        if idx is None:
            idx = len(self.tokens) + 1  # 0 reserved for padding/unknown
            self.tokens[tok] = idx
        self.token_counts[tok] = self.token_counts.get(tok, 0) + 1
        return idx

    def add_topic(self, name: str) -> int:
        idx = self.topics.get(name)
        if idx is None:
            idx = len(self.topics) + 1
            self.topics[name] = idx
        return idx

    def add_subtopic(self, name: str) -> int:
        idx = self.subtopics.get(name)
        if idx is None:
            idx = len(self.subtopics) + 1
            self.subtopics[name] = idx
        return idx

    @property
    def num_tokens(self) -> int:
        return len(self.tokens) + 1

    @property
    def num_topics(self) -> int:
        return len(self.topics) + 1

    @property
    def num_subtopics(self) -> int:
        return len(self.subtopics) + 1

    def topic_name(self, topic_id: int) -> str:
        for name, idx in self.topics.items():
            if idx == topic_id:
                return name
        return f"topic#{topic_id}"


@dataclass
class NewsArticle:
    news_id: str
    topic_id: int
    subtopic_id: int
    title_tokens: tuple[int, ...]  # padded/truncated to a fixed length
    publish_time: float | None = None  # unix seconds; None until derived


@dataclass
class Impression:
    impression_id: str
    user_id: str
    time: float
    history: tuple[str, ...]  # news ids, most recent last, truncated
    candidates: tuple[tuple[str, int], ...]  # (news_id, label in {0, 1})


@dataclass
class ClickEvent:
    user_id: str
    news_id: str
    click_time: float
    age_at_click: float | None = None  # click_time - publish_time, once derived


@dataclass
class ClickLog:
    """Parsed corpus: immutable after `derive_publish_times`."""

    news: dict[str, NewsArticle]
    impressions: list[Impression]
    clicks: list[ClickEvent]
    vocab: Vocabulary
    dropped_candidates: int = 0
    dropped_history: int = 0
    skipped_impressions: int = 0


def _pad_title(indices: list[int], title_len: int) -> tuple[int, ...]:
    out = indices[:title_len]
    out.extend([PAD_INDEX] * (title_len - len(out)))
    return tuple(out)


def load_news(
    path: str | Path,
    vocab: Vocabulary | None = None,
    title_len: int = DEFAULT_TITLE_LEN,
) -> tuple[dict[str, NewsArticle], Vocabulary]:
    """Parse a news TSV into an id-keyed article table, building the vocab.

    Vocabulary indices are assigned in file order, so reparsing the same
    file always produces identical maps.  Duplicate ids and short rows are
    hard errors.
    """
    path = Path(path)
    if vocab is None:
        vocab = Vocabulary()
    news: dict[str, NewsArticle] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) < 4:
                raise ParseError(
                    f"{path}:{lineno}: expected >=4 tab-separated columns, got {len(cols)}"
                )
            news_id, topic, subtopic, title = cols[0], cols[1], cols[2], cols[3]
            if not news_id:
                raise ParseError(f"{path}:{lineno}: empty news_id")
            if news_id in news:
                raise ParseError(f"{path}:{lineno}: duplicate news_id {news_id!r}")
            token_ids = [vocab.add_token(t) for t in tokenize(title)]
            news[news_id] = NewsArticle(
                news_id=news_id,
                topic_id=vocab.add_topic(topic),
                subtopic_id=vocab.add_subtopic(subtopic),
                title_tokens=_pad_title(token_ids, title_len),
            )
    return news, vocab


def load_behaviors(
    path: str | Path,
    news: dict[str, NewsArticle],
    history_len: int = DEFAULT_HISTORY_LEN,
) -> tuple[list[Impression], list[ClickEvent], dict[str, int]]:
    """Parse a behaviors TSV into impressions and click events.

    Candidates and history entries referencing unknown news ids are dropped
    (counted); impressions left with no candidates are skipped (counted).
    A ClickEvent is emitted for every label-1 candidate at the impression
    time.  Impressions come back sorted by (time, impression_id).
    """
    path = Path(path)
    impressions: list[Impression] = []
    clicks: list[ClickEvent] = []
    counters = {"dropped_candidates": 0, "dropped_history": 0, "skipped_impressions": 0}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) < 5:
                raise ParseError(
                    f"{path}:{lineno}: expected 5 tab-separated columns, got {len(cols)}"
                )
            imp_id, user_id, time_s, hist_s, cand_s = cols[:5]
            if not imp_id:
                raise ParseError(f"{path}:{lineno}: empty impression_id")
            if not user_id or user_id.isspace():
                raise ParseError(f"{path}:{lineno}: empty user_id")
            try:
                time = float(time_s)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad timestamp {time_s!r}") from exc

            history: list[str] = []
            for nid in hist_s.split():
                if nid in news:
                    history.append(nid)
                else:
                    counters["dropped_history"] += 1
            history = history[-history_len:]

            candidates: list[tuple[str, int]] = []
            for entry in cand_s.split():
                nid, sep, label_s = entry.rpartition("-")
                if not sep or label_s not in ("0", "1"):
                    raise ParseError(
                        f"{path}:{lineno}: bad candidate entry {entry!r} (want newsid-0|1)"
                    )
                if nid not in news:
                    counters["dropped_candidates"] += 1
                    continue
                candidates.append((nid, int(label_s)))
            if not candidates:
                counters["skipped_impressions"] += 1
                continue

            impressions.append(
                Impression(imp_id, user_id, time, tuple(history), tuple(candidates))
            )
            for nid, label in candidates:
                if label == 1:
                    clicks.append(ClickEvent(user_id, nid, time))

    impressions.sort(key=lambda im: (im.time, im.impression_id))
    clicks.sort(key=lambda c: (c.click_time, c.user_id, c.news_id))
    return impressions, clicks, counters


def derive_publish_times(
    news: dict[str, NewsArticle],
    impressions: list[Impression],
    clicks: list[ClickEvent],
) -> None:
    """Set publish_time = first impression time each article appears in.

    Appearance includes both candidate lists and history lists, which
    maximizes the number of articles with a defined age.  Articles never
    appearing keep publish_time None and are excluded from lifetime
    statistics.  Click ages are filled in afterwards and are non-negative
    by construction.
    """
    first_seen: dict[str, float] = {}
    for im in impressions:
        for nid in im.history:
            t = first_seen.get(nid)
            if t is None or im.time < t:
                first_seen[nid] = im.time
        for nid, _label in im.candidates:
            t = first_seen.get(nid)
            if t is None or im.time < t:
                first_seen[nid] = im.time
    for nid, t in first_seen.items():
        news[nid].publish_time = t
    for click in clicks:
        pub = news[click.news_id].publish_time
        click.age_at_click = None if pub is None else click.click_time - pub


def load_log(
    news_path: str | Path,
    behaviors_path: str | Path,
    vocab: Vocabulary | None = None,
    title_len: int = DEFAULT_TITLE_LEN,
    history_len: int = DEFAULT_HISTORY_LEN,
) -> ClickLog:
    """Parse news + behaviors and derive publish times in one call."""
    news, vocab = load_news(news_path, vocab, title_len)
    impressions, clicks, counters = load_behaviors(behaviors_path, news, history_len)
    derive_publish_times(news, impressions, clicks)
    return ClickLog(
        news=news,
        impressions=impressions,
        clicks=clicks,
        vocab=vocab,
        dropped_candidates=counters["dropped_candidates"],
        dropped_history=counters["dropped_history"],
        skipped_impressions=counters["skipped_impressions"],
    )


def split_impressions(
    impressions: list[Impression],
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> tuple[list[Impression], list[Impression], list[Impression]]:
    """Partition time-sorted impressions into train/dev/test by count quantiles.

    Fractions must sum to 1 (within float tolerance).  The partition is
    disjoint and exhaustive, cut at impression-time order.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be 3 values summing to 1, got {fractions}")
    n = len(impressions)
    n_train = round(fractions[0] * n)
    n_dev = round(fractions[1] * n)
    train = impressions[:n_train]
    dev = impressions[n_train : n_train + n_dev]
    test = impressions[n_train + n_dev :]
    return train, dev, test


def write_news(news: dict[str, NewsArticle], vocab: Vocabulary, path: str | Path) -> None:
    """Serialize an article table back to the news TSV format.

    Titles round-trip as space-joined token strings (original casing and
    punctuation are not retained), so parse(write(parse(f))) == parse(f).
    """
    inv_tokens = {v: k for k, v in vocab.tokens.items()}
    inv_topics = {v: k for k, v in vocab.topics.items()}
    inv_subtopics = {v: k for k, v in vocab.subtopics.items()}
    with Path(path).open("w", encoding="utf-8") as fh:
        for nid in sorted(news):
            art = news[nid]
            title = " ".join(
                inv_tokens[t] for t in art.title_tokens if t != PAD_INDEX
            )
            fh.write(
                f"{art.news_id}\t{inv_topics[art.topic_id]}\t"
                f"{inv_subtopics[art.subtopic_id]}\t{title}\n"
            )


def _format_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(t)


def write_behaviors(impressions: list[Impression], path: str | Path) -> None:
    """Serialize impressions back to the behaviors TSV format."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for im in impressions:
            hist = " ".join(im.history)
            cands = " ".join(f"{nid}-{label}" for nid, label in im.candidates)
            fh.write(
                f"{im.impression_id}\t{im.user_id}\t{_format_time(im.time)}\t{hist}\t{cands}\n"
            )


def strip_publish_times(news: dict[str, NewsArticle]) -> dict[str, NewsArticle]:
    """Copy of the table with publish times cleared (pre-derivation state)."""
    return {nid: replace(art, publish_time=None) for nid, art in news.items()}
