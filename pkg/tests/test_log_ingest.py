import gzip
import io
import ipaddress
import json
from datetime import datetime, timezone

import pytest
from hypothesis import assume, given, settings, strategies as st

from botsieve.errors import ConfigError, ParseError, PreconditionError
from botsieve.log_ingest import (CSV_HEADER, LogRecord, ParseOptions, RawLine, format_caddy,
                                 format_combined, format_haproxy, iter_normalized, iter_raw_lines,
                                 open_log, parse_line, read_normalized, write_normalized)

HAPROXY = ParseOptions(haproxy_ua_slot=1, haproxy_referer_slot=0)


def clf(text, n=1):
    return parse_line(RawLine("apache-combined", n, text.encode()))


def test_combined_reference_line():
    rec = clf('127.0.0.1 - - [10/Oct/2024:13:55:36 +0200] "GET /index.html HTTP/1.1" 200 2326 "-" "curl/8.5.0"')
    assert rec == LogRecord(datetime(2024, 10, 10, 11, 55, 36, tzinfo=timezone.utc),
                            ipaddress.ip_address("127.0.0.1"), "GET", "/index.html", "", 200,
                            "curl/8.5.0", None)
    assert not rec.anonymized


def test_empty_line_is_malformed():
    with pytest.raises(ParseError) as exc:
        parse_line(RawLine("nginx-combined", 7, b""))
    assert exc.value.kind == "malformed-line"
    assert exc.value.line_number == 7


def test_escaped_quotes_and_spaces_stay_inside_fields():
    line = (r'10.1.2.3 - bob [01/Jan/2025:00:00:00 +0000] "GET /a%20b?x=\"1\" HTTP/1.1" 404 - '
            r'"http://ref.example/ \"q\"" "Agent \"quoted\" with spaces"')
    rec = clf(line)
    assert rec.path == "/a b"
    assert rec.query == 'x="1"'
    assert rec.referer == 'http://ref.example/ "q"'
    assert rec.user_agent == 'Agent "quoted" with spaces'
    assert rec.status == 404


def test_malformed_request_line_is_kept():
    rec = clf('10.1.2.3 - - [01/Jan/2025:00:00:00 +0000] "\\x16\\x03\\x01" 400 0 "-" "-"')
    assert rec.method == "-"
    assert rec.path == "\x16\x03\x01"
    assert rec.user_agent == ""


def test_absolute_form_target():
    rec = clf('10.1.2.3 - - [01/Jan/2025:00:00:00 +0000] "GET http://example.com/p?q=1 HTTP/1.1" 200 5 "-" "x"')
    assert (rec.method, rec.path, rec.query) == ("GET", "/p", "q=1")


@pytest.mark.parametrize("line", [
    '10.1.2.3 - - [01/Jan/2025:00:00:00 +0000] "GET / HTTP/1.1" 700 5 "-" "x"',
    'not-an-ip - - [01/Jan/2025:00:00:00 +0000] "GET / HTTP/1.1" 200 5 "-" "x"',
    '10.1.2.3 - - [01/Foo/2025:00:00:00 +0000] "GET / HTTP/1.1" 200 5 "-" "x"',
    '10.1.2.3 - - [01/Jan/2025:00:00:00 +0000] "GET / HTTP/1.1" 200 5 "-"',
])
def test_grammar_violations(line):
    with pytest.raises(ParseError) as exc:
        clf(line)
    assert exc.value.kind == "malformed-line"


def caddy(obj, n=1):
    return parse_line(RawLine("caddy-json", n, json.dumps(obj).encode()))


def test_caddy_without_user_agent():
    rec = caddy({"ts": 1728561336.5, "request": {"remote_ip": "2001:db8::1", "method": "GET",
                                                  "uri": "/x?y=1", "headers": {}}, "status": 301})
    assert rec.user_agent == ""
    assert rec.client_ip == ipaddress.ip_address("2001:db8::1")
    assert rec.timestamp == datetime(2024, 10, 10, 11, 55, 36, 500000, tzinfo=timezone.utc)
    assert (rec.path, rec.query, rec.status) == ("/x", "y=1", 301)


def test_caddy_remote_addr_fallback_and_header():
    rec = caddy({"ts": "2024-10-10T11:55:36Z", "status": 200,
                 "request": {"remote_addr": "192.0.2.7:5123", "method": "POST", "uri": "/",
                             "headers": {"User-Agent": ["Mozilla/5.0 X"], "Referer": ["https://r/"]}}})
    assert str(rec.client_ip) == "192.0.2.7"
    assert rec.user_agent == "Mozilla/5.0 X"
    assert rec.referer == "https://r/"


def test_haproxy_capture_slots():
    line = ('Feb  6 12:14:14 localhost haproxy[14389]: 10.0.1.2:33317 [06/Feb/2009:12:14:14.655] '
            'http-in static/srv1 10/0/30/69/109 200 2750 - - ---- 1/1/1/1/0 0/0 '
            '{http://ref/|Mozilla/5.0 (X11; Linux x86_64) #7Bx#7D} "GET /index.html HTTP/1.1"')
    rec = parse_line(RawLine("haproxy-http", 1, line.encode()), HAPROXY)
    assert rec.user_agent == "Mozilla/5.0 (X11; Linux x86_64) {x}"
    assert rec.referer == "http://ref/"
    assert rec.timestamp == datetime(2009, 2, 6, 12, 14, 14, 655000, tzinfo=timezone.utc)
    assert rec.path == "/index.html"


def test_haproxy_missing_slot_and_missing_config():
    line = (b'10.0.1.2:33317 [06/Feb/2009:12:14:14.655] fe be 1/1/1/1/1 200 1 - - ---- '
            b'1/1/1/1/0 0/0 {only} "GET / HTTP/1.1"')
    with pytest.raises(ParseError) as exc:
        parse_line(RawLine("haproxy-http", 3, line), HAPROXY)
    assert exc.value.kind == "missing-ua-capture"
    with pytest.raises(ConfigError):
        parse_line(RawLine("haproxy-http", 3, line))


def test_unknown_format_is_config_error():
    with pytest.raises(ConfigError):
        parse_line(RawLine("iis", 1, b"x"))


# --- normalized CSV -----------------------------------------------------------

def make_record(i=0, **kw):
    base = dict(timestamp=datetime(2025, 3, 1, 12, 0, i % 60, tzinfo=timezone.utc),
                client_ip=ipaddress.ip_address(f"10.0.0.{i % 250}"), method="GET", path="/p",
                query="", status=200, user_agent="ua", referer=None, anonymized=True)
    base.update(kw)
    return LogRecord(**base)


def test_write_empty_and_single():
    buf = io.BytesIO()
    assert write_normalized([], buf) == 0
    assert buf.getvalue() == b"timestamp,ip,method,path,query,status,user_agent,referer\r\n"
    buf = io.BytesIO()
    assert write_normalized([make_record(user_agent="")], buf) == 1
    lines = buf.getvalue().split(b"\r\n")
    assert lines[1] == b"2025-03-01T12:00:00Z,10.0.0.0,GET,/p,,200,,"


def test_refuses_raw_records():
    buf = io.BytesIO()
    with pytest.raises(PreconditionError):
        write_normalized([make_record(), make_record(anonymized=False)], buf)
    assert buf.getvalue() == b""


def test_header_only_and_schema_mismatch():
    assert read_normalized(io.BytesIO(b"timestamp,ip,method,path,query,status,user_agent,referer\r\n")) == []
    with pytest.raises(ParseError) as exc:
        read_normalized(io.BytesIO((",".join(CSV_HEADER) + ",extra\r\n").encode()))
    assert exc.value.kind == "schema-mismatch"


text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=40)
records = st.builds(
    LogRecord,
    timestamp=st.datetimes(min_value=datetime(1990, 1, 1), max_value=datetime(2090, 1, 1),
                           timezones=st.just(timezone.utc)),
    client_ip=st.one_of(st.ip_addresses(v=4), st.ip_addresses(v=6)),
    method=st.sampled_from(["GET", "POST", "HEAD", "-", "PROPFIND"]),
    path=text.map(lambda t: "/" + t.replace("\x00", "")),
    query=text.map(lambda t: t.replace("\x00", "")),
    status=st.integers(100, 599),
    user_agent=text.map(lambda t: t.replace("\x00", "")),
    referer=st.one_of(st.none(), text.filter(bool).map(lambda t: t.replace("\x00", ""))),
    anonymized=st.just(True),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(records, max_size=20))
def test_normalized_round_trip(recs):
    buf = io.BytesIO()
    write_normalized(recs, buf)
    buf.seek(0)
    back = read_normalized(buf)
    # An empty referer has no representation distinct from "absent".
    assert back == [r if r.referer else LogRecord(*[getattr(r, f) for f in (
        "timestamp", "client_ip", "method", "path", "query", "status", "user_agent")], None, True)
        for r in recs]


def test_round_trip_thousand_records():
    recs = [make_record(i, path=f"/p{i}", user_agent=f'UA "{i}", x', query=f"a={i}&b=,",
                        referer=None if i % 3 else f"https://r/{i}") for i in range(1000)]
    buf = io.BytesIO()
    write_normalized(recs, buf)
    buf.seek(0)
    assert read_normalized(buf) == recs


def test_iter_normalized_extra_columns():
    buf = io.BytesIO((",".join(CSV_HEADER) + ",truth\r\n2025-03-01T12:00:00Z,10.0.0.1,GET,/,,200,u,,bot\r\n").encode())
    [(rec, extras)] = list(iter_normalized(buf, ("truth",)))
    assert extras == ("bot",)
    assert rec.anonymized


def test_gzip_input(tmp_path):
    line = b'127.0.0.1 - - [10/Oct/2024:13:55:36 +0200] "GET / HTTP/1.1" 200 1 "-" "curl/8.5.0"\n'
    path = tmp_path / "a.log.gz"
    path.write_bytes(gzip.compress(line * 3))
    with open_log(path) as fh:
        raws = list(iter_raw_lines(fh, "apache-combined"))
    assert [r.line_number for r in raws] == [1, 2, 3]
    assert all(b"\n" not in r.text for r in raws)


# --- retraction and fuzz properties ---------------------------------------------

fragments = st.sampled_from([
    "127.0.0.1", "::1", "2001:db8::7", "-", " ", '"', "\\", "\\x41", "\\\"", "[", "]",
    "10/Oct/2024:13:55:36 +0200", "GET", "/a%20b", "?q=1", "HTTP/1.1", "200", "404", "1234",
    "Mozilla/5.0 (X11; Linux x86_64)", "curl/8.5.0", "é", "\x00", "\t", "http://h/x",
])


def clf_lines():
    return st.builds(
        lambda ip, ts, req, status, size, ref, ua: f'{ip} - - [{ts}] "{req}" {status} {size} "{ref}" "{ua}"',
        st.sampled_from(["127.0.0.1", "2001:db8::7", "192.0.2.1"]),
        st.sampled_from(["10/Oct/2024:13:55:36 +0200", "29/Feb/2024:00:00:00 -0930"]),
        st.lists(fragments, max_size=6).map("".join).map(lambda s: s.replace('"', '\\"')),
        st.sampled_from(["200", "301", "599"]),
        st.sampled_from(["-", "0", "512"]),
        st.lists(fragments, max_size=4).map("".join).map(lambda s: s.replace('"', '\\"')),
        st.lists(fragments, max_size=6).map("".join).map(lambda s: s.replace('"', '\\"')),
    )


@settings(max_examples=300, deadline=None)
@given(clf_lines())
def test_combined_parse_is_retraction(line):
    try:
        first = parse_line(RawLine("apache-combined", 1, line.encode()))
    except ParseError:
        assume(False)
    again = parse_line(RawLine("apache-combined", 1, format_combined(first).encode()))
    assert again == first


@settings(max_examples=200, deadline=None)
@given(records)
def test_caddy_and_haproxy_retraction(rec):
    rec = LogRecord(rec.timestamp.replace(microsecond=rec.timestamp.microsecond // 1000 * 1000),
                    rec.client_ip, rec.method, rec.path, rec.query, rec.status, rec.user_agent,
                    rec.referer, False)
    c1 = parse_line(RawLine("caddy-json", 1, format_caddy(rec).encode()))
    assert parse_line(RawLine("caddy-json", 1, format_caddy(c1).encode())) == c1
    h1 = parse_line(RawLine("haproxy-http", 1, format_haproxy(rec, 1, 0).encode()), HAPROXY)
    assert parse_line(RawLine("haproxy-http", 1, format_haproxy(h1, 1, 0).encode()), HAPROXY) == h1


@settings(max_examples=500, deadline=None)
@given(st.binary(max_size=300), st.sampled_from(["caddy-json", "apache-combined", "nginx-combined", "haproxy-http"]))
def test_arbitrary_bytes_never_crash(data, fmt):
    raw = RawLine(fmt, 1, data.replace(b"\n", b" ").replace(b"\r", b" "))
    try:
        rec = parse_line(raw, HAPROXY)
    except ParseError:
        return
    assert 100 <= rec.status <= 599
    assert parse_line(raw, HAPROXY) == rec


def test_early_years_round_trip():
    from botsieve.log_ingest import format_timestamp, parse_timestamp
    for year in (1, 25, 999, 2025):
        ts = datetime(year, 6, 7, 4, 48, 20, tzinfo=timezone.utc)
        assert format_timestamp(ts).startswith(f"{year:04d}-06-07T")
        assert parse_timestamp(format_timestamp(ts)) == ts
        assert parse_timestamp(format_timestamp(ts.replace(microsecond=5))) == ts.replace(microsecond=5)
