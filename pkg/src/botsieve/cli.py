"""Command-line front end.

    botsieve ingest   --input access.log --format apache-combined --out-dir run/
    botsieve classify --out-dir run/ --mode full
    botsieve favicon  --out-dir run/ --favicon-rotation-param v
    botsieve evaluate --out-dir run/ --labels labels.csv --external cloudflare=cf.csv
    botsieve report   --out-dir run/ --top-n 10

Exit status: 0 success, 1 usage or configuration error, 2 I/O error,
3 data-integrity error (schema mismatch, bad labels, missing verdicts).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from datetime import date
from pathlib import Path

from . import __version__, pipeline, refdata
from .errors import (BotsieveError, ConfigError, DegenerateInput, FormatError, MissingVerdict,
                     ParseError, PreconditionError, ValidationError)
from .favicon import FaviconMatcher, MarkerEndpoint
from .evaluation import LabelledRequest
from .ip_anon import KEY_ENV_VAR, AnonKey, Anonymizer, anonymize_record
from .log_ingest import SOURCE_FORMATS, ParseOptions, format_combined

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA = 0, 1, 2, 3

log = logging.getLogger("botsieve")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for I/O here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _iso_date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}") from None


def _named_path(text: str) -> tuple[str, Path]:
    name, sep, path = text.partition("=")
    if not sep or not name or not path:
        raise argparse.ArgumentTypeError(f"expected NAME=PATH, got {text!r}")
    return name, Path(path)


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", type=Path, required=True, help="directory for all artifacts")
    p.add_argument("--threads", type=_positive, default=1)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_detection(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("detection")
    g.add_argument("--mode", choices=("strict", "full"), default="full",
                   help="strict: rule cascade only; full: also flag UA-reduction violations")
    g.add_argument("--reference-date", type=_iso_date,
                   help="YYYY-MM-DD; defaults to the day of the latest request")
    g.add_argument("--window-days", type=_positive, default=730, help="deprecation window (default 730)")
    g.add_argument("--bot-list", type=Path, help="bot list replacing the bundled robots.json")
    g.add_argument("--bot-list-format", choices=("robots-json", "plain-names"), default="robots-json")
    g.add_argument("--release-db", type=Path, help="release-date table replacing the bundled one")
    g.add_argument("--frozen-tokens", type=Path)
    g.add_argument("--bot-regex", action="append", default=[], metavar="PATTERN",
                   help="replaces the default bot|crawler|spider|crawling pattern; repeatable")
    g.add_argument("--verdicts", type=Path, help="use this verdict CSV instead of classifying inline")


def _add_favicon(p: argparse.ArgumentParser, marker: bool = True) -> None:
    g = p.add_argument_group("favicon")
    g.add_argument("--favicon-path", default="/favicon.ico")
    g.add_argument("--favicon-rotation-param", metavar="NAME",
                   help="query parameter carrying the daily rotation date (e.g. v)")
    if marker:
        g.add_argument("--marker-path", default="/course/")
        g.add_argument("--marker-method", default="POST")
        g.add_argument("--marker-status", type=int, action="append", metavar="CODE",
                       help="repeatable; default 200")
        g.add_argument("--no-marker", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="botsieve", description="Bot detection over web access logs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="anonymize and normalize raw access logs")
    _add_common(p)
    p.add_argument("--input", type=Path, action="append", required=True,
                   help="raw log (plain or gzip); repeatable")
    p.add_argument("--format", choices=SOURCE_FORMATS, action="append", required=True,
                   help="one per --input, or a single value for all")
    p.add_argument("--key-file", type=Path, help=f"32-byte key (raw or hex); otherwise ${KEY_ENV_VAR}")
    p.add_argument("--haproxy-ua-slot", type=int, help="captured request-header slot holding the UA")
    p.add_argument("--haproxy-referer-slot", type=int)
    p.add_argument("--known-bot-ips", type=Path, help="CIDR list checked against raw addresses")

    p = sub.add_parser("classify", help="classify every distinct user agent")
    _add_common(p)
    _add_detection(p)

    p = sub.add_parser("favicon", help="favicon ledger and daily series")
    _add_common(p)
    _add_favicon(p)

    p = sub.add_parser("evaluate", help="confusion matrices against labelled requests")
    _add_common(p)
    _add_detection(p)
    _add_favicon(p, marker=False)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--external", type=_named_path, action="append", default=[], metavar="NAME=PATH",
                   help="key,is_bot verdicts of another method; repeatable")

    p = sub.add_parser("report", help="top-UA table, version histograms, overlap tables")
    _add_common(p)
    _add_detection(p)
    p.add_argument("--top-n", type=_positive, default=10)
    p.add_argument("--overlap-list", type=_named_path, action="append", default=[], metavar="NAME=PATH",
                   help="extra flagged-UA set (key,is_bot) for the overlap tables; repeatable")

    p = sub.add_parser("synth", help="write a labelled synthetic access log")
    _add_common(p)
    p.add_argument("--requests", type=_positive, default=100_000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--key-file", type=Path)
    return parser


def _load_key(path) -> AnonKey:
    if path is not None:
        return AnonKey.from_file(path)
    if not os.environ.get(KEY_ENV_VAR):
        raise ConfigError(f"no anonymization key: pass --key-file or set {KEY_ENV_VAR}")
    return AnonKey.from_env()


def _detection(args) -> pipeline.DetectionOptions:
    return pipeline.DetectionOptions(
        mode=args.mode, reference_date=args.reference_date, window_days=args.window_days,
        bot_list=args.bot_list, bot_list_format=args.bot_list_format, release_db=args.release_db,
        frozen_tokens=args.frozen_tokens, bot_patterns=tuple(args.bot_regex))


def _normalized(args) -> Path:
    path = args.out_dir / "normalized.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run 'botsieve ingest' first")
    return path


def _cmd_ingest(args) -> int:
    formats = args.format
    if len(formats) == 1:
        formats = formats * len(args.input)
    if len(formats) != len(args.input):
        raise ConfigError("give one --format per --input, or a single --format for all")
    options = ParseOptions(haproxy_ua_slot=args.haproxy_ua_slot, haproxy_referer_slot=args.haproxy_referer_slot)
    anonymizer = Anonymizer(_load_key(args.key_file))
    known = refdata.load_known_bot_ips(args.known_bot_ips) if args.known_bot_ips else None
    summary = pipeline.ingest(list(zip(args.input, formats)), anonymizer, args.out_dir, options,
                              args.threads, known)
    print(f"{summary.records} records from {summary.lines} lines, {summary.error_count} parse errors")
    for s in summary.samples:
        print(f"  {s['input']}:{s['line']}: {s['kind']}", file=sys.stderr)
    return EXIT_OK


def _cmd_classify(args) -> int:
    verdicts = pipeline.classify(_normalized(args), args.out_dir, _detection(args), args.threads)
    print(f"{sum(v.is_bot for v in verdicts)} of {len(verdicts)} user agents flagged")
    return EXIT_OK


def _matcher(args) -> FaviconMatcher:
    return FaviconMatcher(args.favicon_path, args.favicon_rotation_param)


def _cmd_favicon(args) -> int:
    marker = None if args.no_marker else MarkerEndpoint(
        args.marker_path, args.marker_method.upper(), frozenset(args.marker_status or [200]))
    pipeline.favicon(_normalized(args), args.out_dir, _matcher(args), marker, args.threads)
    print((args.out_dir / "fig2_stats.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    pipeline.evaluate(args.labels, args.out_dir, _detection(args), args.external, _matcher(args),
                      args.verdicts, args.threads)
    print((args.out_dir / "comparison.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _cmd_report(args) -> int:
    written = pipeline.report(_normalized(args), args.out_dir, _detection(args), args.top_n,
                              args.overlap_list, args.verdicts, args.threads)
    print("\n".join(str(args.out_dir / name) for name in written))
    return EXIT_OK


def _cmd_synth(args) -> int:
    from .synthetic import generate_corpus

    anonymizer = Anonymizer(_load_key(args.key_file))
    corpus = generate_corpus(args.requests, args.seed, anonymized=False)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "access.log", "w", encoding="utf-8", newline="\n") as fh:
        for item in corpus.requests:
            fh.write(format_combined(item.record) + "\n")
    labelled = [LabelledRequest(anonymize_record(item.record, anonymizer), item.truth, item.source)
                for item in corpus.requests]
    with open(args.out_dir / "labels.csv", "w", encoding="utf-8", newline="") as fh:
        pipeline.write_labels(labelled, fh)
    print(f"{len(labelled)} requests written to {args.out_dir / 'access.log'}")
    return EXIT_OK


COMMANDS = {
    "ingest": _cmd_ingest,
    "classify": _cmd_classify,
    "favicon": _cmd_favicon,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # --help, --version and usage errors; hand the status back to the caller.
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"botsieve: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, FormatError, ValidationError, MissingVerdict, PreconditionError,
            DegenerateInput) as exc:
        print(f"botsieve: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"botsieve: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BotsieveError as exc:
        print(f"botsieve: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
