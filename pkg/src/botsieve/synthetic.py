"""Seeded synthetic traffic with construction-time truth labels.

Humans browse with current, reduced browser UAs and fetch the rotating
favicon once a day. Bots mix self-declared crawlers and the popular
non-browser agents of a real access log, long-deprecated browser builds,
and a stealthy share that copies human UAs exactly. A few bots fetch the
favicon; a few humans run a legacy browser. Used for end-to-end checks
where real labelled logs are unavailable.

Each request's ``source`` names its construction category (``bot:declared``,
``bot:deprecated``, ``bot:unreduced``, ``bot:stealthy``, ``human:fresh`` or
``human:legacy``).
"""

from __future__ import annotations

import ipaddress
import random
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from typing import Optional

from .evaluation.metrics import LabelledRequest
from .log_ingest import LogRecord

CHROME_DESKTOP = "Mozilla/5.0 ({platform}) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/{v}.0.0.0 Safari/537.36"
CHROME_ANDROID = "Mozilla/5.0 (Linux; Android {android}; {device}) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/{v} Mobile Safari/537.36"
FIREFOX = "Mozilla/5.0 ({platform}; rv:{v}.0) Gecko/20100101 Firefox/{v}.0"

HUMAN_UAS = (
    [CHROME_DESKTOP.format(platform=p, v=v)
     for v in (134, 135, 136, 137)
     for p in ("Windows NT 10.0; Win64; x64", "Macintosh; Intel Mac OS X 10_15_7", "X11; Linux x86_64")]
    + [CHROME_ANDROID.format(android=10, device="K", v=f"{v}.0.0.0") for v in (135, 136, 137)]
    + [CHROME_DESKTOP.format(platform="Windows NT 10.0; Win64; x64", v=v) + f" Edg/{v}.0.0.0" for v in (136, 137)]
    + [FIREFOX.format(platform=p, v=v) for v in (137, 138, 139)
       for p in ("Windows NT 10.0; Win64; x64", "X11; Ubuntu; Linux x86_64", "Macintosh; Intel Mac OS X 10.15")]
    + ["Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/18.5 Safari/605.1.15",
       "Mozilla/5.0 (iPhone; CPU iPhone OS 18_5 like Mac OS X) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/18.5 Mobile/15E148 Safari/604.1"]
)

# Real people on machines that stopped updating (Chrome 109 was the last build for Windows 7).
LEGACY_HUMAN_UAS = [CHROME_DESKTOP.format(platform="Windows NT 6.1; Win64; x64", v=109)]

# Popular non-browser agents with relative request weights.
DECLARED_BOT_UAS = [
    ("Apache-CXF/3.5.8", 236298),
    ("facebookexternalhit/1.1 (+http://www.facebook.com/externalhit_uatext.php)", 176824),
    ("Mozilla/5.0 AppleWebKit/537.36 (KHTML, like Gecko; compatible; Amazonbot/0.1; +https://developer.amazon.com/support/amazonbot) Chrome/119.0.6045.214 Safari/537.36", 144945),
    ("Mozilla/5.0 (compatible; bingbot/2.0; +http://www.bing.com/bingbot.htm)", 121909),
    ("Mozilla/5.0 AppleWebKit/537.36 (KHTML, like Gecko; compatible; ClaudeBot/1.0; +claudebot@anthropic.com)", 108189),
    ("Mozilla/4.0 (compatible; MSIE 8.0; Windows NT 5.1; Trident/4.0)", 93610),
    ("", 89875),
]

DEPRECATED_BOT_UAS = (
    ["Mozilla/5.0 (Windows NT 6.1; Win64; x64; rv:47.0) Gecko/20100101 Firefox/47.0"] * 4
    + [FIREFOX.format(platform="Windows NT 10.0; Win64; x64", v=v) for v in (20, 22, 53, 92)]
    + [CHROME_DESKTOP.format(platform=p, v=v).replace(f"{v}.0.0.0", f"{v}.0.{2000 + v}.{v}")
       for v in range(39, 61) for p in ("Windows NT 6.1; Win64; x64", "Windows NT 10.0; Win64; x64")]
    + [CHROME_ANDROID.format(android=a, device=d, v=f"{v}.0.{3000 + v}.90")
       for a, d in (("5.0", "SM-G900F"), ("6.0.1", "Nexus 5"), ("8.0.0", "SM-G950F"), ("4.4.2", "SM-T230"))
       for v in (39, 48, 60)]
)

# Fresh Chrome with an unreduced platform token: caught only by the reduction check.
UNREDUCED_BOT_UAS = [
    CHROME_DESKTOP.format(platform="Windows NT 10.0; WOW64", v=137),
    CHROME_ANDROID.format(android=13, device="SM-S911B", v="137.0.7151.61"),
]


@dataclass(frozen=True)
class SyntheticCorpus:
    requests: list
    start: date
    days: int

    @property
    def reference_date(self) -> date:
        return self.start + timedelta(days=self.days - 1)

    @property
    def records(self) -> list[LogRecord]:
        return [r.record for r in self.requests]


def _ip_pool(rng: random.Random, count: int, v6_share: float = 0.15) -> list:
    v4_base = int(ipaddress.IPv4Address("198.18.0.0"))
    v6_base = int(ipaddress.IPv6Address("2001:db8::"))
    seen, pool = set(), []
    while len(pool) < count:
        if rng.random() < v6_share:
            ip = ipaddress.IPv6Address(v6_base + rng.getrandbits(64))
        else:
            ip = ipaddress.IPv4Address(v4_base + rng.getrandbits(17))
        if ip not in seen:
            seen.add(ip)
            pool.append(ip)
    return pool


def generate_corpus(n_requests: int = 100_000, seed: int = 7, start: date = date(2025, 6, 2),
                    days: int = 7, anonymized: bool = True,
                    bot_favicon_rate: float = 0.08,
                    marker_path: str = "/course/submit") -> SyntheticCorpus:
    """Build exactly ``n_requests`` labelled requests.

    Records are flagged ``anonymized`` by default: the addresses are drawn
    from documentation/benchmark ranges and never identify anyone.
    """
    rng = random.Random(seed)
    humans = _ip_pool(rng, 1500)
    bots = [ip for ip in _ip_pool(rng, 2500) if ip not in set(humans)][:900]
    human_ua = {ip: (("human:legacy", rng.choice(LEGACY_HUMAN_UAS)) if rng.random() < 0.03
                     else ("human:fresh", rng.choice(HUMAN_UAS)))
                for ip in humans}
    declared = [ua for ua, _ in DECLARED_BOT_UAS]
    declared_w = [w for _, w in DECLARED_BOT_UAS]

    def bot_ua() -> tuple[str, str]:
        roll = rng.random()
        if roll < 0.36:
            return "bot:declared", rng.choices(declared, declared_w)[0]
        if roll < 0.66:
            return "bot:deprecated", rng.choice(DEPRECATED_BOT_UAS)
        if roll < 0.72:
            return "bot:unreduced", rng.choice(UNREDUCED_BOT_UAS)
        return "bot:stealthy", rng.choice(HUMAN_UAS)

    bot_ua_of = {ip: bot_ua() for ip in bots}
    bot_favicon = {ip: rng.random() < bot_favicon_rate for ip in bots}

    sessions = []
    for d in range(days):
        day = start + timedelta(days=d)
        for ip in humans:
            if rng.random() < 0.7:
                sessions.append(("human", ip, day))
        for ip in bots:
            if rng.random() < 0.5:
                sessions.append(("bot", ip, day))
    rng.shuffle(sessions)

    out: list[LabelledRequest] = []
    pages = ["/", "/index.html", "/about", "/course/intro", "/course/week1", "/static/app.css",
             "/static/app.js", "/news?page=2", "/contact"]
    bot_pages = pages + ["/wp-login.php", "/.env", "/robots.txt", "/sitemap.xml", "/admin"]
    for truth, ip, day in sessions:
        if len(out) >= n_requests:
            break
        base = datetime(day.year, day.month, day.day, tzinfo=timezone.utc) + timedelta(
            seconds=rng.randrange(0, 80_000))
        events: list[tuple[str, str, int, Optional[str]]] = []
        if truth == "human":
            source, ua = human_ua[ip]
            events.append(("GET", "/", 200, None))
            events.append(("GET", f"/favicon.ico?v={day.isoformat()}", 200, None))
            for _ in range(rng.randint(3, 14)):
                events.append(("GET", rng.choice(pages), rng.choice((200, 200, 200, 304)), None))
            if rng.random() < 0.3:
                events.append(("POST", marker_path, 200, None))
        else:
            source, ua = bot_ua_of[ip]
            for _ in range(rng.randint(8, 40)):
                events.append(("GET", rng.choice(bot_pages), rng.choice((200, 404, 404, 301)), None))
            if bot_favicon[ip]:
                events.insert(1, ("GET", "/favicon.ico", 200, None))
            if rng.random() < 0.05:
                events.append(("POST", marker_path, 404, None))
        ts = base
        for method, target, status, referer in events:
            if len(out) >= n_requests:
                break
            path, _, query = target.partition("?")
            record = LogRecord(ts, ip, method, path, query, status, ua, referer, anonymized=anonymized)
            out.append(LabelledRequest(record, truth, source))
            ts += timedelta(seconds=rng.randint(1, 90))
    out.sort(key=lambda lr: (lr.record.timestamp, lr.record.client_ip.version, lr.record.client_ip))
    return SyntheticCorpus(out, start, days)


# Construction categories the UA rules catch in each mode; the rest go unflagged.
FLAGGED_CATEGORIES = {
    "strict": frozenset({"bot:declared", "bot:deprecated", "human:legacy"}),
    "full": frozenset({"bot:declared", "bot:deprecated", "bot:unreduced", "human:legacy"}),
}


# Daily distinct-IP counts of an 11-day LMS log: all clients, favicon
# fetchers and clients with a successful POST to the course area.
DAILY_TOTAL_IPS = (1564, 1862, 2313, 2632, 2628, 2726, 2260, 2413, 1271, 2017, 1118)
DAILY_FAVICON_IPS = (240, 245, 311, 356, 376, 327, 362, 285, 217, 287, 220)
DAILY_MARKER_POST_IPS = (277, 234, 421, 355, 513, 322, 377, 344, 146, 255, 182)


def daily_counts_fixture(total=DAILY_TOTAL_IPS, favicon=DAILY_FAVICON_IPS, post=DAILY_MARKER_POST_IPS,
                         start: date = date(2024, 1, 15), marker_path: str = "/course/view",
                         anonymized: bool = True) -> list[LogRecord]:
    """Records whose favicon ledger reproduces the given daily series exactly.

    Day ``i`` has ``total[i]`` distinct clients; the first ``favicon[i]`` of
    them fetch the favicon and the first ``post[i]`` POST to the marker.
    """
    if not len(total) == len(favicon) == len(post):
        raise ValueError("series must have equal length")
    ua = HUMAN_UAS[0]
    base = int(ipaddress.IPv4Address("10.0.0.0"))
    out = []
    for i, (n, f, p) in enumerate(zip(total, favicon, post)):
        if f > n or p > n:
            raise ValueError(f"day {i}: subset count exceeds total")
        midnight = datetime(start.year, start.month, start.day, tzinfo=timezone.utc) + timedelta(days=i)
        for k in range(n):
            ip = ipaddress.IPv4Address(base + k)
            ts = midnight + timedelta(seconds=k % 86_000)
            out.append(LogRecord(ts, ip, "GET", "/", "", 200, ua, anonymized=anonymized))
            if k < f:
                out.append(LogRecord(ts, ip, "GET", "/favicon.ico", "", 200, ua, anonymized=anonymized))
            if k < p:
                out.append(LogRecord(ts, ip, "POST", marker_path, "", 200, ua, anonymized=anonymized))
    return out
