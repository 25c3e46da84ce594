"""Tweet corpus ingestion, cleaning, tokenization and tf-idf scoring."""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from floodwatch.errors import AllLinesMalformed, EmptyStoplistFile, UnknownTerm

log = logging.getLogger(__name__)

_ARTIFACT_PREFIXES = ("http://", "https://", "www.", "@", "#")
_SPLIT = re.compile(r"[^0-9a-z+]+")
_PHONE = re.compile(r"^\+\d+$")
_PLUS_PIECE = re.compile(r"(?<![0-9a-z])\+\d+|[0-9a-z]+")
MIN_WORD_LENGTH = 3
MIN_DIGIT_RUN = 5


@dataclass
class TweetRecord:
    id: str
    timestamp: str
    user: str
    raw_text: str
    clean_text: str
    tokens: list[str] = field(default_factory=list)


def preprocess(raw_text: str) -> str:
    """Drop URL, mention and hashtag tokens and collapse whitespace."""
    kept = [t for t in raw_text.split() if not t.lower().startswith(_ARTIFACT_PREFIXES)]
    return " ".join(kept)


def tokenize(clean_text: str) -> list[str]:
    """Lowercase and split on anything but ASCII letters, digits and '+'.

    A '+' survives only as the prefix of a digit run (``+91``); elsewhere it
    acts as a separator.
    """
    out = []
    for tok in _SPLIT.split(clean_text.lower()):
        if not tok:
            continue
        if "+" not in tok or _PHONE.match(tok):
            out.append(tok)
        else:
            out.extend(_plus_pieces(tok))
    return out


def _plus_pieces(tok: str) -> list[str]:
    # "a+b" -> a, b ; "x+91" -> x, 91 ; "++91" -> +91
    return _PLUS_PIECE.findall(tok)


def make_record(obj: dict, index: int) -> TweetRecord | None:
    """Build a cleaned record from a corpus line, or None if the text cleans to nothing."""
    raw = obj["text"]
    if not isinstance(raw, str):
        raise TypeError("text must be a string")
    clean = preprocess(raw)
    if not clean:
        return None
    return TweetRecord(id=str(obj.get("id", index)), timestamp=str(obj.get("date", "")),
                       user=str(obj.get("user", "")), raw_text=raw, clean_text=clean,
                       tokens=tokenize(clean))


def load_corpus(path) -> list[TweetRecord]:
    """Read a JSON Lines corpus (keys ``date``, ``user``, ``text``, optional ``id``).

    Malformed lines are logged and skipped; tweets that clean to empty text
    are dropped silently.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    records, n_lines, n_bad = [], 0, 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            n_lines += 1
            try:
                obj = json.loads(line)
                rec = make_record(obj, lineno - 1)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                n_bad += 1
                log.warning("%s:%d: skipping malformed line (%s)", path, lineno, exc)
                continue
            if rec is not None:
                records.append(rec)
    if n_lines and n_bad == n_lines:
        raise AllLinesMalformed(f"{path}: none of {n_lines} lines could be parsed")
    return records


def records_from_dicts(items: Iterable[dict]) -> list[TweetRecord]:
    out = []
    for i, obj in enumerate(items):
        rec = make_record(obj, i)
        if rec is not None:
            out.append(rec)
    return out


def load_stoplist(path=None) -> frozenset[str]:
    if path is None:
        text = resources.files("floodwatch").joinpath("data/stoplist.txt").read_text("utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise EmptyStoplistFile(f"cannot read stoplist {path}: {exc}") from exc
    words = frozenset(w.strip().lower() for w in text.splitlines() if w.strip())
    if path is not None and not words:
        raise EmptyStoplistFile(f"stoplist {path} is empty")
    return words


def is_content_token(token: str, stoplist: frozenset[str]) -> bool:
    if token.isdigit():
        return len(token) >= MIN_DIGIT_RUN
    return token.isalpha() and len(token) >= MIN_WORD_LENGTH and token not in stoplist


@dataclass
class CorpusStats:
    n_docs: int
    doc_freq: dict[str, int]
    mean_count: dict[str, float]  # occurrences per containing document

    @classmethod
    def from_records(cls, records: Sequence[TweetRecord]) -> "CorpusStats":
        df, total = Counter(), Counter()
        for rec in records:
            counts = Counter(rec.tokens)
            df.update(counts.keys())
            total.update(counts)
        return cls(len(records), dict(df), {t: total[t] / df[t] for t in df})


def tfidf(stats: CorpusStats, term: str) -> float:
    """Mean in-document count times ``ln(N / n_t)``."""
    n_t = stats.doc_freq.get(term, 0)
    if n_t == 0:
        raise UnknownTerm(term)
    return stats.mean_count[term] * math.log(stats.n_docs / n_t)


@dataclass
class ContentWord:
    term: str
    tweets: list[int]
    score: float = 0.0


def content_words(records: Sequence[TweetRecord], stoplist: frozenset[str]) -> list[ContentWord]:
    """Qualifying terms with the indices of the tweets containing them, ordered by first use."""
    where: dict[str, list[int]] = defaultdict(list)
    for i, rec in enumerate(records):
        for tok in dict.fromkeys(rec.tokens):
            if is_content_token(tok, stoplist):
                where[tok].append(i)
    return [ContentWord(term, idx) for term, idx in where.items()]


def score_content_words(records: Sequence[TweetRecord], stoplist: frozenset[str],
                        stats: CorpusStats | None = None) -> list[ContentWord]:
    stats = stats or CorpusStats.from_records(records)
    words = content_words(records, stoplist)
    for w in words:
        w.score = tfidf(stats, w.term)
    return words


def write_content_words_csv(path, words: Sequence[ContentWord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["term", "score", "doc_freq"])
        for cw in sorted(words, key=lambda c: (-c.score, c.term)):
            w.writerow([cw.term, f"{cw.score:.6f}", len(cw.tweets)])
