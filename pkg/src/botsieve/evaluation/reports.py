"""Plain-text and CSV renderings of the evaluation tables."""

from __future__ import annotations

import csv
from typing import Iterable, Mapping, Sequence, TextIO

from .metrics import ConfusionMatrix, OverlapTable, TopRow, half_up

CONFUSION_HEADER = ["method", "tp", "fn", "fp", "tn", "tp_pct", "fn_pct", "fp_pct", "tn_pct"]
TOP_HEADER = ["rank", "browser", "os", "requests", "percent", "user_agent"]
HISTOGRAM_HEADER = ["version", "unique_uas", "requests"]
DAILY_HEADER = ["day", "total_ips", "favicon_ips", "marker_post_ips"]


def _writer(sink: TextIO):
    return csv.writer(sink, lineterminator="\r\n")


def write_top_table(rows: Sequence[TopRow], sink: TextIO) -> None:
    w = _writer(sink)
    w.writerow(TOP_HEADER)
    for rank, row in enumerate(rows, 1):
        w.writerow([rank if row.user_agent is not None else "", row.browser, row.os, row.requests,
                    half_up(row.percent, 2), row.user_agent if row.user_agent is not None else ""])


def render_top_table(rows: Sequence[TopRow]) -> str:
    total = sum(r.requests for r in rows)
    width = max([len(r.browser) for r in rows] + [len("Browser"), len("Total")])
    os_width = max([len(r.os) for r in rows] + [len("Operating System")])
    lines = [f"{'Browser':<{width}}  {'Operating System':<{os_width}}  {'Requests':>10}  {'%':>7}"]
    lines.append("-" * len(lines[0]))
    for r in rows:
        lines.append(f"{r.browser:<{width}}  {r.os:<{os_width}}  {r.requests:>10}  {half_up(r.percent, 2):>7}")
    lines.append("-" * len(lines[0]))
    lines.append(f"{'Total':<{width}}  {'---':<{os_width}}  {total:>10}  {'100' if total else '0':>7}")
    return "\n".join(lines) + "\n"


def write_histogram(unique: Sequence[tuple[int, int]], requests: Sequence[tuple[int, int]],
                    sink: TextIO) -> None:
    """Both weightings side by side, one row per claimed major version."""
    u, r = dict(unique), dict(requests)
    w = _writer(sink)
    w.writerow(HISTOGRAM_HEADER)
    for version in sorted(set(u) | set(r)):
        w.writerow([version, u.get(version, 0), r.get(version, 0)])


def write_overlap(table: OverlapTable, sink: TextIO) -> None:
    """UpSet data: ``intersection`` rows with 0/1 membership flags, then ``size`` rows."""
    w = _writer(sink)
    w.writerow(["kind", *table.sources, "count"])
    for flags, count in table.combinations:
        w.writerow(["intersection", *(int(f) for f in flags), count])
    for name in table.sources:
        w.writerow(["size", *(int(s == name) for s in table.sources), table.sizes[name]])


def write_daily(series: Mapping[str, Sequence[tuple]], sink: TextIO) -> None:
    w = _writer(sink)
    w.writerow(DAILY_HEADER)
    columns = [dict(series.get(k, [])) for k in ("total-ips", "favicon-ips", "marker-post-ips")]
    days = sorted(set().union(*columns))
    for day in days:
        w.writerow([day.isoformat(), *(col.get(day, 0) for col in columns)])


def write_confusion(rows: Iterable[tuple[str, ConfusionMatrix]], sink: TextIO) -> None:
    w = _writer(sink)
    w.writerow(CONFUSION_HEADER)
    for method, cm in rows:
        w.writerow([method, cm.tp, cm.fn, cm.fp, cm.tn, *cm.row(1)])


def render_confusion(rows: Sequence[tuple[str, ConfusionMatrix]]) -> str:
    width = max([len(m) for m, _ in rows] + [len("Method")])
    head = f"{'Method':<{width}}  {'TP (%)':>7}  {'FN (%)':>7}  {'FP (%)':>7}  {'TN (%)':>7}"
    lines = [head, "-" * len(head)]
    for method, cm in rows:
        tp, fn, fp, tn = cm.row(1)
        lines.append(f"{method:<{width}}  {tp:>7}  {fn:>7}  {fp:>7}  {tn:>7}")
    lines.append("")
    lines.append("TP and FN are shares of bot-labelled requests; FP and TN are shares of human-labelled requests.")
    return "\n".join(lines) + "\n"
