"""User-agent string anatomy.

A browser UA is read as four parts: the ``Mozilla/5.0`` compatibility
token, a parenthesized platform token, the rendering-engine token and the
browser product tokens. The scanner below extracts just what the
detection rules need (browser family and version, OS family and version,
platform token) and never raises, whatever the input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

MOZILLA_PREFIX = "Mozilla/5.0"

CHROMIUM_FAMILIES = frozenset({"Chrome", "Chrome-Mobile", "Edge", "Opera"})

_PRODUCT_RE = re.compile(r"([A-Za-z][A-Za-z0-9_.+\-]*)/([0-9][0-9A-Za-z._\-]*)")
_COMPATIBLE_RE = re.compile(r"compatible;\s*([^;()]*)")
_MSIE_RE = re.compile(r"MSIE ([0-9]+(?:\.[0-9A-Za-z]+)*)")
_TRIDENT_RV_RE = re.compile(r"Trident/[0-9.]+.*?rv:([0-9]+(?:\.[0-9]+)*)")
_ENGINE_RE = re.compile(r"\b(AppleWebKit/[0-9][0-9.+]*|Gecko/[0-9A-Za-z.]+|Trident/[0-9.]+|Presto/[0-9.]+|Goanna/[0-9.]+)")
_WINDOWS_RE = re.compile(r"Windows NT ([0-9]+\.[0-9]+)")
_ANDROID_RE = re.compile(r"Android[ /]?([0-9]+(?:\.[0-9]+)*)")
_IOS_RE = re.compile(r"(?:iPhone|CPU) OS ([0-9]+(?:_[0-9]+)*)")
_MACOS_RE = re.compile(r"Mac OS X ([0-9]+(?:[_.][0-9]+)*)")
_CROS_RE = re.compile(r"CrOS \S+ ([0-9]+(?:\.[0-9]+)*)")
_LEADING_INT = re.compile(r"[0-9]+")

WINDOWS_NAMES = {
    "NT 5.0": "Windows 2000",
    "NT 5.1": "Windows XP",
    "NT 5.2": "Windows XP x64",
    "NT 6.0": "Windows Vista",
    "NT 6.1": "Windows 7",
    "NT 6.2": "Windows 8",
    "NT 6.3": "Windows 8.1",
    "NT 10.0": "Windows 10",
}

_BROWSER_LABELS = {
    "Chrome": "Google Chrome",
    "Chrome-Mobile": "Chrome Mobile",
    "Edge": "Microsoft Edge",
    "MSIE": "Internet Explorer",
}


@dataclass(frozen=True)
class ParsedUserAgent:
    raw: str
    has_mozilla5_prefix: bool = False
    platform_token: Optional[str] = None
    browser_family: Optional[str] = None
    browser_major: Optional[int] = None
    browser_full_version: Optional[str] = None
    os_family: Optional[str] = None
    os_version: Optional[str] = None
    engine_token: Optional[str] = None

    @property
    def os_major(self) -> Optional[int]:
        return _major(self.os_version.replace("NT ", "")) if self.os_version else None


def _major(version: Optional[str]) -> Optional[int]:
    if not version:
        return None
    m = _LEADING_INT.match(version)
    return int(m.group()) if m else None


def has_mozilla5_prefix(ua: str) -> bool:
    """``Mozilla/5.0`` followed by end of string or a character outside ASCII ``[0-9A-Za-z]``."""
    if not ua.startswith(MOZILLA_PREFIX):
        return False
    rest = ua[len(MOZILLA_PREFIX):]
    return not rest or not (rest[0].isascii() and rest[0].isalnum())


def _platform_token(ua: str) -> Optional[str]:
    """The parenthesized group directly after the leading product token."""
    first = _PRODUCT_RE.match(ua)
    if first is None:
        return None
    i = first.end()
    while i < len(ua) and ua[i] == " ":
        i += 1
    if i >= len(ua) or ua[i] != "(":
        return None
    depth, start = 0, i + 1
    for j in range(i, len(ua)):
        c = ua[j]
        if c == "(":
            depth += 1
        elif c == ")":
            depth -= 1
            if depth == 0:
                return ua[start:j]
    return ua[start:]


def _detect_os(ua: str, platform: Optional[str]) -> tuple[Optional[str], Optional[str]]:
    text = platform if platform is not None else ua
    if "Windows Phone" in text:
        return "Other(Windows Phone)", None
    m = _WINDOWS_RE.search(text)
    if m:
        return "Windows", "NT " + m.group(1)
    if "Android" in text:
        m = _ANDROID_RE.search(text)
        return "Android", m.group(1) if m else None
    m = _IOS_RE.search(text)
    if m and ("iPhone" in text or "iPad" in text or "iPod" in text):
        return "iOS", m.group(1)
    m = _CROS_RE.search(text)
    if m or "CrOS" in text:
        return "ChromeOS", m.group(1) if m else None
    m = _MACOS_RE.search(text)
    if m or "Macintosh" in text:
        return "macOS", m.group(1) if m else None
    if "Linux" in text or "X11" in text:
        return "Linux", None
    if "Windows" in text:
        return "Windows", None
    return None, None


def _products(ua: str) -> dict[str, str]:
    found: dict[str, str] = {}
    for name, version in _PRODUCT_RE.findall(ua):
        found.setdefault(name, version)
    return found


def _compatible_bot(ua: str) -> Optional[tuple[str, str]]:
    """A ``compatible; Name/x.y`` declaration naming something other than MSIE."""
    for group in _COMPATIBLE_RE.findall(ua):
        m = _PRODUCT_RE.search(group)
        if m and not group.lstrip().startswith("MSIE"):
            return m.group(1), m.group(2)
    return None


def _detect_browser(ua: str, os_family: Optional[str]) -> tuple[Optional[str], Optional[str]]:
    declared = _compatible_bot(ua)
    if declared:
        return f"Other({declared[0]})", declared[1]
    m = _MSIE_RE.search(ua)
    if m:
        return "MSIE", m.group(1)
    m = _TRIDENT_RV_RE.search(ua)
    if m:
        return "MSIE", m.group(1)
    products = _products(ua)
    for token in ("Edg", "EdgA", "EdgiOS", "Edge"):
        if token in products:
            return "Edge", products[token]
    if "OPR" in products:
        return "Opera", products["OPR"]
    if ua.startswith("Opera/"):
        return "Opera", products.get("Version", products.get("Opera"))
    for token in ("Firefox", "FxiOS"):
        if token in products:
            return "Firefox", products[token]
    if "HeadlessChrome" in products:
        return "Other(HeadlessChrome)", products["HeadlessChrome"]
    if "CriOS" in products:
        return "Chrome-Mobile", products["CriOS"]
    if "Chrome" in products:
        mobile = "Mobile" in ua or os_family == "Android"
        return ("Chrome-Mobile" if mobile else "Chrome"), products["Chrome"]
    if "Safari" in products and "Version" in products and os_family in ("macOS", "iOS", None):
        return "Safari", products["Version"]
    if not has_mozilla5_prefix(ua) and products:
        first = _PRODUCT_RE.match(ua)
        if first:
            return f"Other({first.group(1)})", first.group(2)
    return None, None


def parse_user_agent(ua: str) -> ParsedUserAgent:
    """Extract prefix, platform, browser and OS facts from a UA string.

    Total: unrecognizable input simply leaves the optional fields unset.
    """
    if not isinstance(ua, str):
        ua = str(ua)
    if not ua:
        return ParsedUserAgent(raw=ua)
    try:
        platform = _platform_token(ua)
        os_family, os_version = _detect_os(ua, platform)
        family, full = _detect_browser(ua, os_family)
        major = _major(full)
        if major is None:
            family, full = (family, None) if family and family.startswith("Other(") else (None, None)
        engine = _ENGINE_RE.search(ua)
        return ParsedUserAgent(
            raw=ua,
            has_mozilla5_prefix=has_mozilla5_prefix(ua),
            platform_token=platform,
            browser_family=family,
            browser_major=major,
            browser_full_version=full,
            os_family=os_family,
            os_version=os_version,
            engine_token=engine.group(1) if engine else None,
        )
    except (RecursionError, MemoryError):
        return ParsedUserAgent(raw=ua, has_mozilla5_prefix=has_mozilla5_prefix(ua))


def extract_android_version(p: ParsedUserAgent) -> Optional[int]:
    if p.os_family != "Android":
        return None
    return _major(p.os_version)


def family_name(family: Optional[str]) -> Optional[str]:
    """``Other(curl)`` -> ``curl``; known families unchanged."""
    if family and family.startswith("Other(") and family.endswith(")"):
        return family[6:-1]
    return family


def browser_label(p: ParsedUserAgent) -> str:
    """Human-readable browser label used in report tables."""
    if not p.raw:
        return "(empty)"
    if p.browser_family is None:
        return "Unknown"
    name = _BROWSER_LABELS.get(p.browser_family, family_name(p.browser_family))
    if p.browser_family in ("MSIE", "Safari") or p.browser_family.startswith("Other("):
        version = p.browser_full_version
    else:
        version = str(p.browser_major) if p.browser_major is not None else None
    return f"{name} {version}" if version else name


def os_label(p: ParsedUserAgent) -> str:
    if p.os_family is None:
        return "---"
    if p.os_family == "Windows":
        return WINDOWS_NAMES.get(p.os_version or "", "Windows")
    if p.os_family in ("Android", "iOS") and p.os_major is not None:
        return f"{p.os_family} {p.os_major}"
    return family_name(p.os_family)
