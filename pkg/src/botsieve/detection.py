"""User-agent based bot detection.

The rule cascade checks, in order: self-declared bot words, a list of
known bot names, the ``Mozilla/5.0`` prefix, long-deprecated browser or
OS versions and, optionally, UA-reduction coherence. Unlike a
short-circuit cascade, :func:`classify` evaluates every rule so that the
per-rule overlap can be reported; the bot/not-bot outcome is the same.
"""

from __future__ import annotations

import csv
import enum
import io
import re
import threading
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Optional

from . import refdata
from .errors import ConfigError
from .refdata import BotList, FrozenPlatformTokens, ReleaseDatabase, os_version_key
from .ua_model import CHROMIUM_FAMILIES, ParsedUserAgent, parse_user_agent


class Reason(str, enum.Enum):
    REGEX_BOT = "regex-bot"
    LIST_BOT = "list-bot"
    NON_MOZILLA_PREFIX = "non-mozilla-prefix"
    DEPRECATED_BROWSER = "deprecated-browser"
    DEPRECATED_OS = "deprecated-os"
    UA_REDUCTION_VIOLATION = "ua-reduction-violation"

    def __str__(self) -> str:
        return self.value


REASON_ORDER = tuple(Reason)

MODES = ("strict", "full")

# Platforms whose frozen token a reducing browser would send.
_REDUCED_PLATFORMS = frozenset({"Windows", "macOS", "Linux", "Android", "ChromeOS"})


@dataclass(frozen=True)
class Verdict:
    ua: str
    is_bot: bool
    reasons: frozenset = frozenset()
    matched_bot_name: Optional[str] = None

    def ordered_reasons(self) -> list[Reason]:
        return [r for r in REASON_ORDER if r in self.reasons]


@dataclass(frozen=True)
class DetectionConfig:
    reference_date: date
    bot_list: BotList
    release_db: ReleaseDatabase
    frozen_tokens: FrozenPlatformTokens
    regex_set: re.Pattern = field(default_factory=refdata.compile_bot_regex)
    deprecation_window: timedelta = timedelta(days=730)
    enable_reduction_check: bool = True
    # Used for OS versions without a known end-of-support date.
    os_support_window: timedelta = timedelta(days=3 * 365)

    def __post_init__(self):
        if not isinstance(self.reference_date, date):
            raise ConfigError("reference_date must be an explicit calendar date")
        if self.deprecation_window <= timedelta(0):
            raise ConfigError("deprecation_window must be positive")
        frozen_os = set()
        for token in self.frozen_tokens.tokens:
            p = parse_user_agent(f"Mozilla/5.0 ({token})")
            key = os_version_key(p)
            if key is not None:
                frozen_os.add((p.os_family, key))
        object.__setattr__(self, "_frozen_os", frozenset(frozen_os))

    @property
    def cutoff(self) -> date:
        return self.reference_date - self.deprecation_window

    @classmethod
    def default(cls, reference_date: date, mode: str = "full", **overrides) -> "DetectionConfig":
        """Configuration backed by the bundled reference data."""
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        kwargs = dict(
            bot_list=refdata.default_bot_list(),
            release_db=refdata.default_release_db(),
            frozen_tokens=refdata.default_frozen_tokens(),
            enable_reduction_check=(mode == "full"),
        )
        kwargs.update(overrides)
        return cls(reference_date=reference_date, **kwargs)


def is_bot_by_regex(ua: str, config: DetectionConfig) -> bool:
    return config.regex_set.search(ua) is not None


def is_bot_by_list(ua: str, config: DetectionConfig) -> Optional[str]:
    entry = config.bot_list.match(ua)
    return entry.bot_name if entry else None


def has_deprecated_version(p: ParsedUserAgent, config: DetectionConfig) -> set[Reason]:
    found: set[Reason] = set()
    cutoff = config.cutoff
    if p.browser_family and p.browser_major is not None:
        since = config.release_db.browser_deprecated_since(p.browser_family, p.browser_major)
        if since is not None and since < cutoff:
            found.add(Reason.DEPRECATED_BROWSER)
    key = os_version_key(p)
    if key is not None and (p.os_family, key) not in config._frozen_os:
        since = config.release_db.os_deprecated_since(p.os_family, key, config.os_support_window)
        if since is not None and since < cutoff:
            found.add(Reason.DEPRECATED_OS)
    return found


def violates_ua_reduction(p: ParsedUserAgent, config: DetectionConfig) -> bool:
    if not config.enable_reduction_check:
        return False
    if p.browser_family not in CHROMIUM_FAMILIES or p.browser_major is None:
        return False
    threshold = config.release_db.reduction_min_major.get(p.browser_family)
    if threshold is None or p.browser_major < threshold:
        return False
    if p.os_family not in _REDUCED_PLATFORMS:
        return False
    return not config.frozen_tokens.contains(p.platform_token)


def classify(ua: str, config: DetectionConfig) -> Verdict:
    reasons: set[Reason] = set()
    if is_bot_by_regex(ua, config):
        reasons.add(Reason.REGEX_BOT)
    name = is_bot_by_list(ua, config)
    if name is not None:
        reasons.add(Reason.LIST_BOT)
    p = parse_user_agent(ua)
    if not p.has_mozilla5_prefix:
        reasons.add(Reason.NON_MOZILLA_PREFIX)
    reasons |= has_deprecated_version(p, config)
    if violates_ua_reduction(p, config):
        reasons.add(Reason.UA_REDUCTION_VIOLATION)
    return Verdict(ua, bool(reasons), frozenset(reasons), name)


class Detector:
    """Memoizing front end to :func:`classify`; safe to share between threads."""

    def __init__(self, config: DetectionConfig):
        self.config = config
        self._cache: dict[str, Verdict] = {}
        self._lock = threading.Lock()

    def __call__(self, ua: str) -> Verdict:
        with self._lock:
            hit = self._cache.get(ua)
        if hit is not None:
            return hit
        verdict = classify(ua, self.config)
        with self._lock:
            return self._cache.setdefault(ua, verdict)


VERDICT_HEADER = ["user_agent", "is_bot", "reasons", "matched_bot_name"]


def write_verdicts(verdicts: Iterable[Verdict], sink: io.TextIOBase) -> int:
    writer = csv.writer(sink, lineterminator="\r\n")
    writer.writerow(VERDICT_HEADER)
    count = 0
    for v in verdicts:
        writer.writerow([v.ua, "true" if v.is_bot else "false",
                         "|".join(r.value for r in v.ordered_reasons()), v.matched_bot_name or ""])
        count += 1
    return count
