"""Location-keyed integration of change analysis and tweet analysis."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Mapping, Sequence

from floodwatch.change import ChangeReport, format_percent
from floodwatch.errors import RunIdMismatch, UnparseableTimestamp
from floodwatch.raster import CLASS_NAMES
from floodwatch.tweets import TweetRecord

log = logging.getLogger(__name__)

REPORT_VERSION = 1


def parse_timestamp(text: str) -> datetime:
    """ISO-8601 timestamp; naive values are taken as UTC."""
    try:
        ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    except (AttributeError, ValueError) as exc:
        raise UnparseableTimestamp(f"cannot parse timestamp {text!r}") from exc
    return ts if ts.tzinfo else ts.replace(tzinfo=timezone.utc)


@dataclass
class TimeWindow:
    start: datetime
    end: datetime   # exclusive

    def __post_init__(self):
        if isinstance(self.start, str):
            self.start = parse_timestamp(self.start)
        if isinstance(self.end, str):
            self.end = parse_timestamp(self.end)
        if self.end <= self.start:
            raise ValueError("window end must come after its start")

    def __contains__(self, ts: datetime) -> bool:
        return self.start <= ts < self.end

    def overlaps(self, other: "TimeWindow") -> bool:
        return self.start < other.end and other.start < self.end

    def to_list(self) -> list[str]:
        return [self.start.isoformat(), self.end.isoformat()]


@dataclass
class KeywordQuery:
    keywords: list[str]
    window_pre: TimeWindow
    window_post: TimeWindow

    def __post_init__(self):
        if not self.keywords:
            raise ValueError("keyword list must not be empty")
        if self.window_pre.overlaps(self.window_post):
            raise ValueError("pre and post windows overlap")


@dataclass
class FrequencyReport:
    keywords: list[str]
    pre_counts: dict[str, int]
    post_counts: dict[str, int]
    total_pre: int
    total_post: int
    run_id: str | None = None

    @property
    def percent_change(self) -> float | None:
        if self.total_pre == 0:
            return None
        return (self.total_post - self.total_pre) / self.total_pre * 100.0

    def to_dict(self) -> dict:
        pc = self.percent_change
        return {"keywords": list(self.keywords), "pre_counts": dict(self.pre_counts),
                "post_counts": dict(self.post_counts), "total_pre": self.total_pre,
                "total_post": self.total_post, "percent_change": pc,
                "percent_change_display": "n/a" if pc is None else f"{pc:.2f}%",
                "run_id": self.run_id}

    @classmethod
    def from_dict(cls, d: dict) -> "FrequencyReport":
        return cls(list(d["keywords"]), dict(d["pre_counts"]), dict(d["post_counts"]),
                   int(d["total_pre"]), int(d["total_post"]), d.get("run_id"))

    @classmethod
    def empty(cls, run_id: str | None = None) -> "FrequencyReport":
        return cls([], {}, {}, 0, 0, run_id)


def _mentions(text: str, keywords: Sequence[str]) -> list[str]:
    low = text.lower()
    return [k for k in keywords if k.lower() in low]


def keyword_frequency(records: Sequence[TweetRecord], query: KeywordQuery,
                      run_id: str | None = None) -> FrequencyReport:
    """Count records per window whose raw text contains any keyword (case-insensitive substring)."""
    pre = dict.fromkeys(query.keywords, 0)
    post = dict.fromkeys(query.keywords, 0)
    total_pre = total_post = 0
    for rec in records:
        try:
            ts = parse_timestamp(rec.timestamp)
        except UnparseableTimestamp:
            log.warning("tweet %s: unparseable timestamp %r, skipped", rec.id, rec.timestamp)
            continue
        if ts in query.window_pre:
            bucket = pre
        elif ts in query.window_post:
            bucket = post
        else:
            continue
        hits = _mentions(rec.raw_text, query.keywords)
        for k in hits:
            bucket[k] += 1
        if hits:
            if bucket is pre:
                total_pre += 1
            else:
                total_post += 1
    return FrequencyReport(list(query.keywords), pre, post, total_pre, total_post, run_id)


def region_tweet_proportion(records: Sequence[TweetRecord],
                            region_keywords: Mapping[str, Sequence[str]]) -> dict[str, float]:
    """Fraction of records whose raw text mentions any keyword of each region."""
    if not records:
        raise ValueError("region proportions need a non-empty corpus")
    out = {}
    for region, kws in region_keywords.items():
        hits = sum(1 for r in records if _mentions(r.raw_text, kws))
        out[region] = hits / len(records)
    return out


@dataclass
class EmergencyReport:
    change: dict
    regions: list[dict]
    proportions: dict[str, float]
    frequency: dict
    summary: list[str]
    generated_at: str
    run_id: str | None = None
    version: int = REPORT_VERSION

    def to_dict(self) -> dict:
        return {"version": self.version, "run_id": self.run_id,
                "generated_at": self.generated_at, "change": self.change,
                "regions": self.regions, "proportions": self.proportions,
                "frequency": self.frequency, "summary": list(self.summary)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EmergencyReport":
        return cls(change=d["change"], regions=d["regions"], proportions=d["proportions"],
                   frequency=d["frequency"], summary=list(d["summary"]),
                   generated_at=d["generated_at"], run_id=d.get("run_id"),
                   version=int(d.get("version", REPORT_VERSION)))

    @classmethod
    def from_json(cls, text: str) -> "EmergencyReport":
        return cls.from_dict(json.loads(text))

    def render_text(self) -> str:
        lines = [f"Emergency report{f' [{self.run_id}]' if self.run_id else ''}",
                 f"Generated: {self.generated_at}", "", "Land-cover change:"]
        ch = self.change
        for c, name in enumerate(CLASS_NAMES):
            if c < len(ch.get("pre_counts", [])):
                lines.append(f"  {name:<11} {ch['pre_counts'][c]:>10} -> {ch['post_counts'][c]:>10}"
                             f"  {format_percent(ch['percent_change'][c])}")
        lines += ["", "Affected regions (by changed area):"]
        if not self.regions:
            lines.append("  none")
        for r in self.regions:
            lines.append(f"  {r['name']:<20} area {r['area']:>8} px  dominant {r['class']:<10}"
                         f"  tweets {r['proportion'] * 100:6.2f}%")
        fr = self.frequency
        lines += ["", "Keyword frequency:",
                  f"  pre {fr.get('total_pre', 0)} -> post {fr.get('total_post', 0)}"
                  f"  ({fr.get('percent_change_display', 'n/a')})", "", "Situational summary:"]
        lines += [f"  {t}" for t in self.summary] or ["  none"]
        return "\n".join(lines) + "\n"


def _check_run_ids(*ids: str | None) -> str | None:
    present = {i for i in ids if i is not None}
    if len(present) > 1:
        raise RunIdMismatch(f"inputs come from different runs: {sorted(present)}")
    return present.pop() if present else None


def generate_report(change: ChangeReport, summary: Sequence[str], freq: FrequencyReport,
                    proportions: Mapping[str, float], generated_at: str | None = None,
                    run_id: str | None = None) -> EmergencyReport:
    """Merge the analyses; one region row per (changed region, annotation name).

    Rows are ordered by changed area (descending), then tweet proportion
    (descending), then name. Every named region appears in the proportions
    table, with 0.0 when no keyword mapping exists for it.
    """
    run_id = _check_run_ids(run_id, change.run_id, freq.run_id)
    props = dict(proportions)
    rows = []
    for reg in change.regions:
        for name in reg.names:
            props.setdefault(name, 0.0)
            rows.append({"name": name, "area": reg.area, "bbox": list(reg.bbox),
                         "class": CLASS_NAMES[reg.label], "proportion": props[name]})
    rows.sort(key=lambda r: (-r["area"], -r["proportion"], r["name"]))
    if generated_at is None:
        generated_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return EmergencyReport(change=change.to_dict(), regions=rows,
                           proportions=dict(sorted(props.items())),
                           frequency=freq.to_dict(), summary=list(summary),
                           generated_at=generated_at, run_id=run_id)
