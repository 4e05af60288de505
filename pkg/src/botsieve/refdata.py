"""Reference data consumed by the detection rules.

Bot-name lists (ai-robots.txt ``robots.json`` or plain token lists), the
browser/OS release-date table, the frozen UA-reduction platform tokens
and known-bot IP ranges. Snapshots of the first three ship with the
package; all loaders also accept operator-supplied files.
"""

from __future__ import annotations

import bisect
import csv
import io
import ipaddress
import json
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from .errors import FormatError, PreconditionError, ValidationError
from .log_ingest import LogRecord
from .ua_model import ParsedUserAgent

Source = Union[bytes, str, Path, io.IOBase]

DEFAULT_BOT_PATTERN = r"bot|crawler|spider|crawling"

# Chrome-Mobile shares Chrome's release train.
_RELEASE_FAMILY_ALIASES = {"Chrome-Mobile": "Chrome"}


def _read_bytes(source: Source) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    data = source.read()
    return data.encode("utf-8") if isinstance(data, str) else data


def _bundled(name: str) -> bytes:
    return resources.files("botsieve").joinpath("data").joinpath(name).read_bytes()


# --- bot lists --------------------------------------------------------------

@dataclass(frozen=True)
class BotEntry:
    match_token: str
    bot_name: str
    operator: Optional[str] = None


@dataclass(frozen=True)
class BotList:
    entries: frozenset = frozenset()

    def __post_init__(self):
        # Longest token first, then lexicographic: the first hit wins.
        ordered = sorted(self.entries, key=lambda e: (-len(e.match_token), e.match_token))
        object.__setattr__(self, "_ordered", tuple((e.match_token.lower(), e) for e in ordered))

    def __len__(self) -> int:
        return len(self.entries)

    def tokens(self) -> set[str]:
        return {e.match_token for e in self.entries}

    def match(self, ua: str) -> Optional[BotEntry]:
        lowered = ua.lower()
        for token, entry in self._ordered:
            if token in lowered:
                return entry
        return None

    def merged(self, other: "BotList") -> "BotList":
        return _dedupe(list(self.entries) + list(other.entries))


def _dedupe(entries: Iterable[BotEntry]) -> BotList:
    seen: dict[str, BotEntry] = {}
    for entry in entries:
        key = entry.match_token.lower()
        if key not in seen or entry.match_token < seen[key].match_token:
            seen[key] = entry
    return BotList(frozenset(seen.values()))


def load_bot_list(source: Source, format: str = "robots-json") -> BotList:
    """Load a bot list in ``robots-json`` or ``plain-names`` format."""
    raw = _read_bytes(source)
    entries: list[BotEntry] = []
    if format == "robots-json":
        if not raw.strip():
            return BotList()
        try:
            obj = json.loads(raw)
        except ValueError as exc:
            raise FormatError(f"invalid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise FormatError("robots.json must be an object mapping bot names to metadata")
        for index, (name, meta) in enumerate(obj.items()):
            if not isinstance(name, str) or not name.strip():
                raise FormatError("empty bot name", index)
            if meta is not None and not isinstance(meta, dict):
                raise FormatError(f"metadata for {name!r} is not an object", index)
            operator = (meta or {}).get("operator")
            entries.append(BotEntry(name.strip(), name.strip(),
                                    operator if isinstance(operator, str) else None))
    elif format == "plain-names":
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("plain-names list is not UTF-8") from None
        for index, line in enumerate(text.splitlines()):
            token = line.split("#", 1)[0].strip()
            if token:
                entries.append(BotEntry(token, token))
    else:
        raise FormatError(f"unknown bot list format {format!r}")
    return _dedupe(entries)


def default_bot_list() -> BotList:
    return load_bot_list(_bundled("robots.json"), "robots-json")


def compile_bot_regex(patterns: Iterable[str] = (DEFAULT_BOT_PATTERN,)) -> re.Pattern:
    return re.compile("|".join(f"(?:{p})" for p in patterns), re.IGNORECASE)


# --- release database ---------------------------------------------------------

def _version_tuple(version: str) -> tuple[int, ...]:
    nums = re.findall(r"[0-9]+", version)
    if not nums:
        raise ValueError(version)
    return tuple(int(n) for n in nums)


def os_version_key(p: ParsedUserAgent) -> Optional[str]:
    """Release-table key for the OS claimed by ``p`` (e.g. ``NT 6.1``, ``10.14``, ``4``)."""
    if not p.os_version or p.os_family not in ("Windows", "Android", "iOS", "macOS"):
        return None
    if p.os_family == "Windows":
        return p.os_version
    parts = re.findall(r"[0-9]+", p.os_version)
    if not parts:
        return None
    if p.os_family == "macOS" and parts[0] == "10" and len(parts) > 1:
        return f"10.{int(parts[1])}"
    return str(int(parts[0]))


@dataclass(frozen=True)
class ReleaseDatabase:
    browser_releases: Mapping[tuple[str, int], date]
    os_releases: Mapping[tuple[str, str], date]
    browser_eol: Mapping[tuple[str, int], date] = field(default_factory=dict)
    os_eol: Mapping[tuple[str, str], date] = field(default_factory=dict)
    # Lowest major from which a Chromium family sends frozen platform tokens.
    reduction_min_major: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        majors: dict[str, list[int]] = {}
        for family, major in self.browser_releases:
            majors.setdefault(family, []).append(major)
        object.__setattr__(self, "_majors", {f: sorted(v) for f, v in majors.items()})

    def browser_deprecated_since(self, family: str, major: int) -> Optional[date]:
        """Release date of the next major, else the version's EOL, else None."""
        family = _RELEASE_FAMILY_ALIASES.get(family, family)
        if (family, major) not in self.browser_releases:
            return None
        majors = self._majors[family]
        i = bisect.bisect_right(majors, major)
        if i < len(majors):
            return self.browser_releases[(family, majors[i])]
        return self.browser_eol.get((family, major))

    def os_deprecated_since(self, family: str, version: str, support_window: timedelta) -> Optional[date]:
        if (family, version) not in self.os_releases:
            return None
        eol = self.os_eol.get((family, version))
        return eol if eol is not None else self.os_releases[(family, version)] + support_window

    def has_browser(self, family: str, major: int) -> bool:
        return (_RELEASE_FAMILY_ALIASES.get(family, family), major) in self.browser_releases


def _check_monotone(kind: str, table: Mapping[tuple[str, object], date], order) -> None:
    by_family: dict[str, list] = {}
    for (family, version), released in table.items():
        by_family.setdefault(family, []).append((order(version), version, released))
    for family, rows in by_family.items():
        rows.sort()
        for (_, v1, d1), (_, v2, d2) in zip(rows, rows[1:]):
            if not d1 < d2:
                raise ValidationError("non-monotone",
                                      f"{kind} family {family}: {v2} ({d2}) is not released after {v1} ({d1})")


def load_release_db(source: Source) -> ReleaseDatabase:
    """Load and validate a ``kind,family,version,release_date,eol_date`` CSV."""
    text = _read_bytes(source).decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["kind", "family", "version", "release_date", "eol_date"]:
        raise FormatError(f"unexpected release table header {header!r}")
    browsers, oses, b_eol, o_eol, reduction = {}, {}, {}, {}, {}
    for index, row in enumerate(reader):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 5:
            raise FormatError(f"expected 5 fields, got {len(row)}", index)
        kind, family, version, released, eol = (c.strip() for c in row)
        try:
            released_d = date.fromisoformat(released)
            eol_d = date.fromisoformat(eol) if eol else None
        except ValueError:
            raise FormatError(f"bad date in {row!r}", index) from None
        if kind in ("browser", "reduction"):
            try:
                major = int(version)
            except ValueError:
                raise FormatError(f"browser version must be an integer major, got {version!r}", index) from None
            if kind == "reduction":
                reduction[family] = major
                continue
            key = (family, major)
            if key in browsers:
                raise FormatError(f"duplicate entry {family} {major}", index)
            browsers[key] = released_d
            if eol_d:
                b_eol[key] = eol_d
        elif kind == "os":
            try:
                _version_tuple(version)
            except ValueError:
                raise FormatError(f"OS version without digits: {version!r}", index) from None
            key = (family, version)
            if key in oses:
                raise FormatError(f"duplicate entry {family} {version}", index)
            oses[key] = released_d
            if eol_d:
                o_eol[key] = eol_d
        else:
            raise FormatError(f"unknown kind {kind!r}", index)
    _check_monotone("browser", browsers, lambda v: v)
    _check_monotone("os", oses, _version_tuple)
    return ReleaseDatabase(browsers, oses, b_eol, o_eol, reduction)


def default_release_db() -> ReleaseDatabase:
    return load_release_db(_bundled("release_db.csv"))


# --- frozen platform tokens --------------------------------------------------

@dataclass(frozen=True)
class FrozenPlatformTokens:
    tokens: frozenset

    def contains(self, platform_token: Optional[str]) -> bool:
        if platform_token is None:
            return False
        if platform_token in self.tokens:
            return True
        # Chrome on Android prefixes the frozen "Android 10; K" with "Linux; ".
        return platform_token.startswith("Linux; ") and platform_token[7:] in self.tokens


def load_frozen_tokens(source: Source) -> FrozenPlatformTokens:
    text = _read_bytes(source).decode("utf-8")
    tokens = {line.split("#", 1)[0].strip() for line in text.splitlines()}
    return FrozenPlatformTokens(frozenset(t for t in tokens if t))


def default_frozen_tokens() -> FrozenPlatformTokens:
    return load_frozen_tokens(_bundled("frozen_tokens.txt"))


# --- known-bot IP ranges ------------------------------------------------------

@dataclass(frozen=True)
class KnownBotIPs:
    networks: frozenset = frozenset()

    def __post_init__(self):
        by_len: dict[tuple[int, int], set[int]] = {}
        for net in self.networks:
            by_len.setdefault((net.version, net.prefixlen), set()).add(int(net.network_address))
        object.__setattr__(self, "_by_len", by_len)

    def __contains__(self, ip) -> bool:
        ip = ipaddress.ip_address(ip)
        value, width = int(ip), ip.max_prefixlen
        for (version, plen), starts in self._by_len.items():
            if version != ip.version:
                continue
            if (value >> (width - plen)) << (width - plen) in starts:
                return True
        return False


def load_known_bot_ips(source: Source) -> KnownBotIPs:
    text = _read_bytes(source).decode("utf-8")
    nets = set()
    for index, line in enumerate(text.splitlines()):
        entry = line.split("#", 1)[0].strip()
        if not entry:
            continue
        try:
            nets.add(ipaddress.ip_network(entry, strict=False))
        except ValueError:
            raise FormatError(f"invalid CIDR block {entry!r}", index) from None
    return KnownBotIPs(frozenset(nets))


def is_known_bot_ip(ip, db: KnownBotIPs) -> bool:
    """Membership of a raw client address in the known-bot ranges.

    Accepts an address or a :class:`LogRecord`; anonymized records are
    rejected because list membership is only meaningful on real addresses.
    """
    if isinstance(ip, LogRecord):
        if ip.anonymized:
            raise PreconditionError("known-bot IP lookup requires the pre-anonymization address")
        ip = ip.client_ip
    return ip in db
