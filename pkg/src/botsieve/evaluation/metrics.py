"""Detection-quality tables: confusion matrices, top user agents,
claimed-version histograms and rule-overlap (UpSet) counts."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from itertools import compress
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from ..detection import REASON_ORDER, Verdict
from ..errors import FormatError, MissingVerdict
from ..log_ingest import LogRecord
from ..refdata import Source, _read_bytes
from ..ua_model import browser_label, extract_android_version, os_label, parse_user_agent

TRUTH_VALUES = ("bot", "human")


def half_up(value: float, decimals: int = 1) -> str:
    """Render ``value`` rounded half-up, e.g. 67.55 -> '67.6'."""
    if value != value:
        return "n/a"
    quantum = Decimal(1).scaleb(-decimals)
    return str(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class LabelledRequest:
    record: LogRecord
    truth: str
    source: str = ""

    def __post_init__(self):
        if self.truth not in TRUTH_VALUES:
            raise ValueError(f"truth must be 'bot' or 'human', got {self.truth!r}")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    @staticmethod
    def _pct(part: int, whole: int) -> float:
        return 100.0 * part / whole if whole else float("nan")

    @property
    def tp_pct(self) -> float:
        return self._pct(self.tp, self.tp + self.fn)

    @property
    def fn_pct(self) -> float:
        return self._pct(self.fn, self.tp + self.fn)

    @property
    def fp_pct(self) -> float:
        return self._pct(self.fp, self.fp + self.tn)

    @property
    def tn_pct(self) -> float:
        return self._pct(self.tn, self.fp + self.tn)

    def row(self, decimals: int = 1) -> list[str]:
        return [half_up(x, decimals) for x in (self.tp_pct, self.fn_pct, self.fp_pct, self.tn_pct)]


VerdictSource = Union[Mapping[str, Union[Verdict, bool]], Callable[[LogRecord], Optional[bool]]]


def _lookup(source: VerdictSource) -> Callable[[LogRecord], Optional[bool]]:
    if callable(source):
        return source

    def by_key(record: LogRecord) -> Optional[bool]:
        for key in (record.user_agent, str(record.client_ip)):
            if key in source:
                value = source[key]
                return value.is_bot if isinstance(value, Verdict) else bool(value)
        return None

    return by_key


def confusion(verdicts: VerdictSource, labelled: Iterable[LabelledRequest]) -> ConfusionMatrix:
    """Request-level confusion matrix.

    ``verdicts`` maps a UA (or, failing that, the client IP) to a verdict,
    or is a callable deciding per record.
    """
    decide = _lookup(verdicts)
    tp = fn = fp = tn = 0
    missing: list[str] = []
    for item in labelled:
        flagged = decide(item.record)
        if flagged is None:
            missing.append(item.record.user_agent)
            continue
        if item.truth == "bot":
            tp, fn = (tp + 1, fn) if flagged else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if flagged else (fp, tn + 1)
    if missing:
        raise MissingVerdict(sorted(set(missing)))
    return ConfusionMatrix(tp, fn, fp, tn)


@dataclass(frozen=True)
class TopRow:
    user_agent: Optional[str]
    browser: str
    os: str
    requests: int
    percent: float


def top_user_agents(records: Iterable[LogRecord], n: int) -> list[TopRow]:
    """The ``n`` most frequent UA strings plus an ``Other`` remainder row."""
    if n < 1:
        raise ValueError("n must be at least 1")
    counts = Counter(r.user_agent for r in records)
    total = sum(counts.values())
    if not total:
        return []
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    rows = []
    for ua, count in ranked[:n]:
        p = parse_user_agent(ua)
        rows.append(TopRow(ua, browser_label(p), os_label(p), count, 100.0 * count / total))
    rest = sum(c for _, c in ranked[n:])
    if rest:
        rows.append(TopRow(None, "Other", "---", rest, 100.0 * rest / total))
    return rows


HISTOGRAM_FAMILIES = ("Android", "Chrome-merged", "Chrome", "Chrome-Mobile", "Firefox",
                      "Safari", "Edge", "MSIE", "Opera")


def _claimed_version(ua: str, family: str) -> Optional[int]:
    p = parse_user_agent(ua)
    if family == "Android":
        return extract_android_version(p)
    if family == "Chrome-merged":
        return p.browser_major if p.browser_family in ("Chrome", "Chrome-Mobile") else None
    if p.browser_family == family:
        return p.browser_major
    if p.os_family == family:
        return p.os_major
    return None


def version_histogram(records: Iterable[LogRecord], family: str,
                      weighting: str = "unique-uas") -> list[tuple[int, int]]:
    """Claimed major versions of ``family`` counted per unique UA or per request."""
    if weighting not in ("unique-uas", "requests"):
        raise ValueError("weighting must be 'unique-uas' or 'requests'")
    per_ua = Counter(r.user_agent for r in records)
    hist: Counter = Counter()
    for ua, count in per_ua.items():
        version = _claimed_version(ua, family)
        if version is not None:
            hist[version] += 1 if weighting == "unique-uas" else count
    return sorted(hist.items())


@dataclass(frozen=True)
class OverlapTable:
    sources: tuple
    # (membership flags per source, count); only non-empty combinations.
    combinations: tuple
    sizes: Mapping[str, int]

    def label(self, flags: Sequence[bool]) -> str:
        return "&".join(compress(self.sources, flags))


def reason_overlap(memberships: Mapping[str, Iterable[str]],
                   weights: Optional[Mapping[str, int]] = None) -> OverlapTable:
    """Exact intersection counts across named sets of flagged UAs.

    With ``weights`` (UA -> request count) every UA counts its weight
    instead of 1.
    """
    names = tuple(memberships)
    if len(set(names)) != len(names):
        raise ValueError("source names must be distinct")
    sets = [set(memberships[name]) for name in names]
    combos: Counter = Counter()
    for ua in set().union(*sets) if sets else set():
        flags = tuple(ua in s for s in sets)
        combos[flags] += weights.get(ua, 0) if weights is not None else 1
    sizes = {name: (sum(weights.get(ua, 0) for ua in s) if weights is not None else len(s))
             for name, s in zip(names, sets)}
    ordered = sorted(combos.items(), key=lambda kv: (-kv[1], [not f for f in kv[0]]))
    return OverlapTable(names, tuple(ordered), sizes)


def verdict_memberships(verdicts: Iterable[Verdict]) -> dict[str, set[str]]:
    """Per-reason sets of flagged UAs, in the fixed reason order."""
    out: dict[str, set[str]] = {r.value: set() for r in REASON_ORDER}
    for v in verdicts:
        for reason in v.reasons:
            out[reason.value].add(v.ua)
    return out


_TRUE = {"true", "1", "yes", "bot"}
_FALSE = {"false", "0", "no", "human"}


def import_external_verdicts(source: Source) -> dict[str, bool]:
    """Read ``key,is_bot`` verdicts (a verdict CSV export is accepted too)."""
    text = _read_bytes(source).decode("utf-8-sig")
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if not header or len(header) < 2 or header[0] not in ("key", "user_agent") or header[1] != "is_bot":
        raise FormatError(f"expected a 'key,is_bot' header, got {header!r}")
    result: dict[str, bool] = {}
    for index, row in enumerate(reader):
        if not row:
            continue
        if len(row) < 2:
            raise FormatError("missing is_bot column", index)
        key, raw = row[0], row[1].strip().lower()
        if raw in _TRUE:
            value = True
        elif raw in _FALSE:
            value = False
        else:
            raise FormatError(f"is_bot must be true/false, got {row[1]!r}", index)
        if key in result and result[key] != value:
            raise FormatError(f"conflicting labels for key {key!r}", index)
        result[key] = value
    return result
