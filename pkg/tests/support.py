"""Shared fixtures and oracles for the test suite."""

import re

from botsieve.detection import has_deprecated_version, is_bot_by_list, is_bot_by_regex
from botsieve.ua_model import parse_user_agent

SAFARI_26 = ("Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7) AppleWebKit/605.1.15 "
             "(KHTML, like Gecko) Version/26.3.1 Safari/605.1.15")
FIREFOX_47 = "Mozilla/5.0 (Windows NT 6.1; Win64; x64; rv:47.0) Gecko/20100101 Firefox/47.0"
MSIE_8 = "Mozilla/4.0 (compatible; MSIE 8.0; Windows NT 5.1; Trident/4.0)"

_PREFIX = re.compile(r"Mozilla/5\.0(?![0-9A-Za-z])")


def cascade_oracle(ua: str, config) -> bool:
    """The short-circuit rule cascade written out step by step, independent of ``classify``."""
    if is_bot_by_regex(ua, config) or is_bot_by_list(ua, config) is not None:
        return True
    if not _PREFIX.match(ua):
        return True
    if has_deprecated_version(parse_user_agent(ua), config):
        return True
    return False


CURATED_UAS = [
    SAFARI_26,
    FIREFOX_47,
    MSIE_8,
    "curl/8.5.0",
    "Googlebot/2.1 (+http://www.google.com/bot.html)",
    "Mozilla/5.0 AppleWebKit/537.36 (KHTML, like Gecko; compatible; ChatGPT-User/1.0; +https://openai.com/bot)",
    "",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/139.0.0.0 Safari/537.36",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64; Surface Pro 9) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/139.0.0.0 Safari/537.36",
    "Mozilla/5.0 (Linux; Android 10; K) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/139.0.0.0 Mobile Safari/537.36",
    "Mozilla/5.0 (Linux; Android 13; SM-S911B) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/139.0.7258.94 Mobile Safari/537.36",
    "Mozilla/5.0 (Linux; Android 4.4.2; SM-T230) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/39.0.2171.93 Safari/537.36",
    "Mozilla/5.0 (Linux; Android 6.0.1; Nexus 5) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/48.0.2564.95 Mobile Safari/537.36",
    "Mozilla/5.0 (Linux; Android 8.0.0; SM-G950F) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/60.0.3112.107 Mobile Safari/537.36",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/139.0.0.0 Safari/537.36",
    "Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/139.0.0.0 Safari/537.36",
    "Mozilla/5.0 (X11; CrOS x86_64 14541.0.0) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/139.0.0.0 Safari/537.36",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/139.0.0.0 Safari/537.36 Edg/139.0.0.0",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64; rv:142.0) Gecko/20100101 Firefox/142.0",
    "Mozilla/5.0 (X11; Ubuntu; Linux x86_64; rv:115.0) Gecko/20100101 Firefox/115.0",
    "Mozilla/5.0 (iPhone; CPU iPhone OS 18_6 like Mac OS X) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/18.6 Mobile/15E148 Safari/604.1",
    "Mozilla/5.0 (Windows NT 6.1; WOW64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/49.0.2623.112 Safari/537.36",
    "Mozilla/5.0 (Windows NT 6.1) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/41.0.2228.0 Safari/537.36",
    "Mozilla/5.0 (Windows NT 5.1; rv:52.0) Gecko/20100101 Firefox/52.0",
    "Mozilla/5.0 (Windows NT 10.0; WOW64; Trident/7.0; rv:11.0) like Gecko",
    "Mozilla/5.0 (compatible; bingbot/2.0; +http://www.bing.com/bingbot.htm)",
    "Mozilla/5.0 AppleWebKit/537.36 (KHTML, like Gecko; compatible; ClaudeBot/1.0; +claudebot@anthropic.com)",
    "Mozilla/5.0 AppleWebKit/537.36 (KHTML, like Gecko; compatible; Amazonbot/0.1; +https://developer.amazon.com/support/amazonbot) Chrome/119.0.6045.214 Safari/537.36",
    "facebookexternalhit/1.1 (+http://www.facebook.com/externalhit_uatext.php)",
    "Apache-CXF/3.5.8",
    "python-requests/2.32.3",
    "Wget/1.21.4",
    "Mozilla/5.00 (Windows NT 10.0; Win64; x64)",
    "Mozilla/5.0X",
    "Mozilla/5.0",
    "Mozilla/5.0 (compatible; SemrushBot/7~bl; +http://www.semrush.com/bot.html)",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) HeadlessChrome/139.0.0.0 Safari/537.36",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/120.0.0.0 Safari/537.36 OPR/106.0.0.0",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_9_5) AppleWebKit/600.8.9 (KHTML, like Gecko) Version/8.0.8 Safari/600.8.9",
    "Mozilla/5.0 (compatible; MSIE 10.0; Windows NT 6.2; Trident/6.0)",
]
assert len(CURATED_UAS) == 40 and len(set(CURATED_UAS)) == 40


def mp_compare(a, b, dps=60):
    """Paired t, two-sided p, Cohen's d (SD of differences), Pearson r and its p, in mpmath."""
    import mpmath as mp
    with mp.workdps(dps):
        n = len(a)
        xs = [mp.mpf(x) for x in a]
        ys = [mp.mpf(y) for y in b]
        diffs = [x - y for x, y in zip(xs, ys)]
        mean = mp.fsum(diffs) / n
        sd = mp.sqrt(mp.fsum((d - mean) ** 2 for d in diffs) / (n - 1))
        t = mean / (sd / mp.sqrt(n))
        df = n - 1
        p_t = mp.betainc(mp.mpf(df) / 2, mp.mpf(1) / 2, 0, df / (df + t * t), regularized=True)
        mx, my = mp.fsum(xs) / n, mp.fsum(ys) / n
        sxy = mp.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
        sxx = mp.fsum((x - mx) ** 2 for x in xs)
        syy = mp.fsum((y - my) ** 2 for y in ys)
        r = sxy / mp.sqrt(sxx * syy)
        df_r = n - 2
        tr2 = r * r * df_r / (1 - r * r)
        p_r = mp.betainc(mp.mpf(df_r) / 2, mp.mpf(1) / 2, 0, df_r / (df_r + tr2), regularized=True)
        return tuple(float(v) for v in (t, p_t, mean / sd, r, p_r))


# Acceptance outcomes, printed by the terminal-summary hook in conftest.py.
ACCEPTANCE: dict = {}


class criterion:
    """Context manager recording PASS/FAIL for one acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details)
        if exc_type is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {exc}".splitlines()[0]
        ACCEPTANCE[self.number] = f"{status} criterion {self.number} ({self.title}): {detail}"
        print(ACCEPTANCE[self.number])
        return False
