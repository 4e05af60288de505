"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line through :class:`support.criterion`;
the lines are repeated in the ``acceptance criteria`` section of the
pytest terminal summary.
"""

import csv
import json
import random
import string
import time
from datetime import date
from itertools import combinations
from pathlib import Path

import numpy as np
import pytest

from botsieve.cli import main
from botsieve.detection import DetectionConfig, classify
from botsieve.evaluation import compare_series
from botsieve.favicon import FaviconLedger, MarkerEndpoint
from botsieve.ip_anon import AnonKey, Anonymizer, common_prefix_length
from botsieve.log_ingest import format_caddy, format_combined, format_haproxy, iter_normalized
from botsieve.synthetic import daily_counts_fixture, generate_corpus

from support import CURATED_UAS, cascade_oracle, criterion, mp_compare

GOLDEN = Path(__file__).parent / "golden"
KEY_HEX = "5a" * 16 + "c3" * 16


def cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"botsieve {argv[0]} exited with {code}"


def csv_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def key_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("key") / "anon.key"
    path.write_text(KEY_HEX)
    return path


# 1 -----------------------------------------------------------------------------

def test_criterion_1_daily_series_statistics():
    with criterion(1, "favicon vs marker statistics from the daily-count fixture") as c:
        records = daily_counts_fixture()
        start = time.perf_counter()
        ledger = FaviconLedger(marker=MarkerEndpoint("/course/view")).ingest_all(records)
        fav = [n for _, n in ledger.daily_series("favicon-ips")]
        post = [n for _, n in ledger.daily_series("marker-post-ips")]
        s = compare_series(fav, post)
        elapsed = time.perf_counter() - start
        c.note(f"t={s.t_statistic:.3f} df={s.degrees_of_freedom} p={s.p_value:.3f} "
               f"d={s.cohens_d:.3f} r={s.pearson_r:.3f} p_r={s.pearson_p:.2g} in {elapsed:.2f}s")
        assert s.t_statistic == pytest.approx(-0.981, abs=0.03)
        assert s.degrees_of_freedom == 10
        assert s.p_value == pytest.approx(0.350, abs=0.02)
        assert s.cohens_d == pytest.approx(-0.30, abs=0.05)
        assert s.pearson_r == pytest.approx(0.87, abs=0.02)
        assert s.pearson_p < 0.001
        assert elapsed < 1.0


# 2 -----------------------------------------------------------------------------

def _fuzz_uas(n, seed=2024):
    rng = random.Random(seed)
    alphabet = string.printable + "éü中\x00\x7f"
    tokens = ["Mozilla/5.0", "Mozilla/4.0", "bot", "Bot", "crawler", "spider", "ChatGPT-User", "Googlebot",
              "Chrome/", "Firefox/", "Version/", "Safari/", "Android ", "Windows NT ", "rv:", "MSIE ",
              "(", ")", ";", " ", "/", "."]
    out = []
    while len(out) < n:
        kind = rng.randrange(5)
        if kind == 0:
            s = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 80)))
        elif kind == 1:
            s = "".join(rng.choice(tokens) + str(rng.randrange(200)) for _ in range(rng.randrange(1, 12)))
        else:
            s = list(rng.choice(CURATED_UAS))
            for _ in range(rng.randrange(1, 6)):
                op = rng.randrange(3)
                pos = rng.randrange(len(s) + 1)
                if op == 0:
                    s.insert(pos, rng.choice(alphabet))
                elif op == 1 and s:
                    del s[min(pos, len(s) - 1)]
                elif s:
                    s[min(pos, len(s) - 1)] = rng.choice(string.digits + ". ")
            s = "".join(s)
            if kind == 4:
                s = s.replace(str(rng.randrange(10)), str(rng.randrange(10)))
        out.append(s)
    return out


def test_criterion_2_rule_cascade_oracle():
    with criterion(2, "rule cascade agrees with the literal transcription") as c:
        config = DetectionConfig.default(date(2025, 6, 9), "strict")
        fuzz = _fuzz_uas(10_000)
        disagreements = [ua for ua in CURATED_UAS + fuzz if classify(ua, config).is_bot != cascade_oracle(ua, config)]
        flagged = sum(classify(ua, config).is_bot for ua in fuzz)
        c.note(f"{len(CURATED_UAS)} curated + {len(fuzz)} fuzzed UAs ({flagged} flagged), "
               f"{len(disagreements)} disagreements")
        assert len(CURATED_UAS) == 40
        assert disagreements == []


# 3 -----------------------------------------------------------------------------

def test_criterion_3_crypto_pan_properties():
    with criterion(3, "Crypto-PAn determinism, prefix preservation and injectivity") as c:
        start = time.perf_counter()
        rng = random.Random(3)
        key = AnonKey.from_bytes(bytes(rng.getrandbits(8) for _ in range(32)))
        a, b = Anonymizer(key), Anonymizer(AnonKey.from_bytes(key.to_bytes()))
        sample = [rng.getrandbits(32) for _ in range(1000)]
        assert (a.anonymize_v4_many(sample) == b.anonymize_v4_many(sample)).all()
        assert a.anonymize("2001:db8::7") == b.anonymize("2001:db8::7")

        base = rng.getrandbits(24) << 8
        block = [base + i for i in range(256)]
        mapped = [int(x) for x in a.anonymize_v4_many(block)]
        pairs = 0
        for i, j in combinations(range(256), 2):
            assert common_prefix_length(mapped[i], mapped[j], 32) == common_prefix_length(block[i], block[j], 32)
            pairs += 1

        def random_pairs(width, count):
            for _ in range(count):
                x = rng.getrandbits(width)
                y = x ^ (rng.getrandbits(width) >> rng.randrange(width + 1))
                yield x, y

        v4 = list(random_pairs(32, 10_000))
        ax = a.anonymize_v4_many([x for x, _ in v4])
        ay = a.anonymize_v4_many([y for _, y in v4])
        for (x, y), u, v in zip(v4, ax, ay):
            assert common_prefix_length(int(u), int(v), 32) == common_prefix_length(x, y, 32)
        v6 = list(random_pairs(128, 10_000))
        bx = a.anonymize_v6_many([x.to_bytes(16, "big") for x, _ in v6])
        by = a.anonymize_v6_many([y.to_bytes(16, "big") for _, y in v6])
        for (x, y), u, v in zip(v6, bx, by):
            assert common_prefix_length(int.from_bytes(u, "big"), int.from_bytes(v, "big"), 128) == \
                common_prefix_length(x, y, 128)

        addrs = np.unique(np.random.default_rng(3).integers(0, 2 ** 32, 1_100_000, dtype=np.uint64))[:1_000_000]
        assert len(addrs) == 1_000_000
        collisions = len(addrs) - len(np.unique(a.anonymize_v4_many(addrs)))
        elapsed = time.perf_counter() - start
        c.note(f"{pairs} /24 pairs, 10000 v4 + 10000 v6 pairs, {collisions} collisions "
               f"over 1M addresses, {elapsed:.1f}s")
        assert pairs == 32_640
        assert collisions == 0
        assert elapsed < 60


# 4 -----------------------------------------------------------------------------

def test_criterion_4_statistics_against_extended_precision():
    with criterion(4, "t-test and Pearson match the extended-precision oracle") as c:
        rng = random.Random(4)
        worst = 0.0
        lengths = [3, 200] + [rng.randrange(3, 201) for _ in range(98)]
        for n in lengths:
            scale = rng.choice([1, 100, 10_000])
            a = [rng.gauss(0, scale) for _ in range(n)]
            shift, slope = rng.gauss(0, scale / 3), rng.uniform(-2, 2)
            b = [slope * x + shift + rng.gauss(0, scale) for x in a]
            got = compare_series(a, b)
            want = mp_compare(a, b)
            for g, w in zip((got.t_statistic, got.p_value, got.cohens_d, got.pearson_r, got.pearson_p), want):
                worst = max(worst, abs(g - w))
            assert got.degrees_of_freedom == n - 1
        c.note(f"{len(lengths)} series, lengths 3..200, max abs error {worst:.2e}")
        assert worst <= 1e-9


# 5 -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory, key_file):
    root = tmp_path_factory.mktemp("synthetic")
    cli("synth", "--requests", 100_000, "--seed", 7, "--key-file", key_file, "--out-dir", root)
    out = root / "run"
    start = time.perf_counter()
    cli("ingest", "--input", root / "access.log", "--format", "apache-combined", "--key-file", key_file,
        "--out-dir", out)
    cli("classify", "--out-dir", out, "--mode", "full")
    cli("favicon", "--out-dir", out, "--favicon-rotation-param", "v")
    cli("evaluate", "--out-dir", out, "--labels", root / "labels.csv", "--mode", "full",
        "--verdicts", out / "verdicts.csv", "--favicon-rotation-param", "v")
    cli("report", "--out-dir", out, "--verdicts", out / "verdicts.csv")
    return out, time.perf_counter() - start


def test_criterion_5_synthetic_corpus_rates(synthetic_run):
    with criterion(5, "synthetic 100k corpus through the full-mode pipeline") as c:
        out, elapsed = synthetic_run
        table = csv_rows(out / "confusion.csv")
        assert table[0] == ["method", "tp", "fn", "fp", "tn", "tp_pct", "fn_pct", "fp_pct", "tn_pct"]
        rows = {r[0]: r for r in table[1:]}
        ua = rows["user-agent"]
        tp_pct, fp_pct = float(ua[5]), float(ua[7])
        assert sum(int(x) for x in ua[1:5]) == 100_000
        c.note(f"user-agent TP {ua[5]}% FP {ua[7]}%; user-agent+favicon TP {rows['user-agent+favicon'][5]}% "
               f"FP {rows['user-agent+favicon'][7]}%; pipeline {elapsed:.1f}s")
        assert tp_pct > 60.0
        assert fp_pct < 5.0
        for r in table[1:]:
            assert abs(float(r[5]) + float(r[6]) - 100.0) <= 0.1
            assert abs(float(r[7]) + float(r[8]) - 100.0) <= 0.1


# 6 -----------------------------------------------------------------------------

def _fuzz_log_lines(fmt, records, n, rng):
    render = {"apache-combined": format_combined, "caddy-json": format_caddy,
              "haproxy-http": lambda r: format_haproxy(r, ua_slot=0)}[fmt]
    templates = [render(r).encode("utf-8") for r in records]
    noise = bytes(b for b in range(256) if b not in (0x0A, 0x0D))
    for _ in range(n):
        line = bytearray(rng.choice(templates))
        roll = rng.random()
        if roll < 0.4:
            pass
        elif roll < 0.75:
            for _ in range(rng.randrange(1, 8)):
                pos = rng.randrange(len(line) + 1)
                op = rng.randrange(3)
                if op == 0:
                    line[pos:pos] = bytes([rng.choice(noise)])
                elif op == 1 and line:
                    del line[min(pos, len(line) - 1)]
                elif line:
                    line[min(pos, len(line) - 1)] = rng.choice(noise)
        elif roll < 0.9:
            line = line[:rng.randrange(len(line) + 1)]
        else:
            line = bytearray(rng.choice(noise) for _ in range(rng.randrange(0, 200)))
        yield bytes(line) + b"\n"


def test_criterion_6_parser_robustness(tmp_path, key_file):
    with criterion(6, "1M-line mixed-format fuzz run") as c:
        rng = random.Random(6)
        records = generate_corpus(3000, seed=6, anonymized=False).records
        sizes = {"apache-combined": 400_000, "caddy-json": 300_000, "haproxy-http": 300_000}
        inputs = []
        for fmt, n in sizes.items():
            path = tmp_path / f"{fmt}.log"
            with open(path, "wb") as fh:
                fh.writelines(_fuzz_log_lines(fmt, records, n, rng))
            inputs += ["--input", path, "--format", fmt]
        start = time.perf_counter()
        cli("ingest", *inputs, "--haproxy-ua-slot", 0, "--key-file", key_file, "--out-dir", tmp_path / "out",
            "--threads", 4)
        elapsed = time.perf_counter() - start
        summary = json.loads((tmp_path / "out" / "ingest_summary.json").read_text())
        with open(tmp_path / "out" / "normalized.csv", "rb") as fh:
            # Quoted fields may hold newlines decoded from JSON escapes, so count records, not lines.
            written = sum(1 for _ in iter_normalized(fh))
        per_input = {e["format"]: (e["records"], e["errors"], e["lines"]) for e in summary["inputs"]}
        c.note(f"{summary['lines']} lines -> {summary['records']} records + "
               f"{summary['parse_errors']['count']} tallied errors in {elapsed:.1f}s")
        assert summary["lines"] == 1_000_000
        for fmt, n in sizes.items():
            records_, errors, lines = per_input[fmt]
            assert lines == n and records_ + errors == n
        assert summary["records"] + summary["parse_errors"]["count"] == 1_000_000
        assert written == summary["records"]


# 7 -----------------------------------------------------------------------------

def _mixed_fixtures(root, key_file):
    cli("synth", "--requests", 60_000, "--seed", 17, "--key-file", key_file, "--out-dir", root)
    extra = generate_corpus(25_000, seed=18, anonymized=False).records
    (root / "caddy.log").write_text("".join(format_caddy(r) + "\n" for r in extra[:12_000]), encoding="utf-8")
    (root / "haproxy.log").write_text("".join(format_haproxy(r, ua_slot=0) + "\n" for r in extra[12_000:]),
                                      encoding="utf-8")
    (root / "known.txt").write_text("198.18.0.0/20\n2001:db8::/48\n")
    with open(root / "external.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "is_bot"])
        labelled = generate_corpus(60_000, seed=17).records
        for ua in sorted({r.user_agent for r in extra + labelled}):
            w.writerow([ua, "true" if "bot" in ua.lower() else "false"])


def _pipeline(root, key_file, out, threads):
    t = ["--threads", threads]
    cli("ingest", "--input", root / "access.log", "--format", "apache-combined",
        "--input", root / "caddy.log", "--format", "caddy-json",
        "--input", root / "haproxy.log", "--format", "haproxy-http", "--haproxy-ua-slot", 0,
        "--known-bot-ips", root / "known.txt", "--key-file", key_file, "--out-dir", out, *t)
    cli("classify", "--out-dir", out, *t)
    cli("favicon", "--out-dir", out, *t)
    cli("evaluate", "--out-dir", out, "--labels", root / "labels.csv", "--external", f"ext={root / 'external.csv'}", *t)
    cli("report", "--out-dir", out, "--overlap-list", f"ext={root / 'external.csv'}", *t)


def test_criterion_7_thread_count_determinism(tmp_path, key_file):
    with criterion(7, "threads 1 and 8 give byte-identical outputs") as c:
        _mixed_fixtures(tmp_path, key_file)
        one, eight = tmp_path / "t1", tmp_path / "t8"
        _pipeline(tmp_path, key_file, one, 1)
        _pipeline(tmp_path, key_file, eight, 8)
        names = sorted(p.name for p in one.iterdir())
        assert names == sorted(p.name for p in eight.iterdir())
        differing = [n for n in names if (one / n).read_bytes() != (eight / n).read_bytes()]
        c.note(f"{len(names)} files compared, {len(differing)} differ")
        assert len(names) >= 15
        assert differing == []


# 8 -----------------------------------------------------------------------------

def _check_cell(pattern, value):
    import re
    return re.fullmatch(pattern, value) is not None


def test_criterion_8_report_structure(synthetic_run):
    with criterion(8, "report files match the golden structure") as c:
        out, _ = synthetic_run
        golden = json.loads((GOLDEN / "synthetic_reports.json").read_text())
        checked = 0
        for name, shape in golden["csv"].items():
            rows = csv_rows(out / name)
            assert rows[0] == shape["header"], name
            body = rows[1:]
            assert shape["min_rows"] <= len(body) <= shape["max_rows"], (name, len(body))
            for row in body:
                assert len(row) == len(shape["header"]), (name, row)
                for cell, pattern in zip(row, shape["cells"]):
                    assert _check_cell(pattern, cell), (name, row)
            checked += 1
        text = (out / "table1_top_ua.txt").read_text().splitlines()
        shape = golden["text"]["table1_top_ua.txt"]
        assert _check_cell(shape["first_line"], text[0])
        assert _check_cell(shape["last_line"], text[-1])
        assert len(text) == shape["lines"]
        checked += 1
        # Cross-file consistency: both weightings of a histogram agree on versions, and the
        # request-weighted overlap sizes sum the request counts of the flagged UAs.
        for name in ("fig3_android.csv", "fig4_chrome.csv", "fig4_firefox.csv"):
            body = csv_rows(out / name)[1:]
            assert all(int(r[1]) <= int(r[2]) for r in body)
            assert [int(r[0]) for r in body] == sorted(int(r[0]) for r in body)
        top = csv_rows(out / "table1_top_ua.csv")[1:]
        assert abs(sum(float(r[4]) for r in top) - 100.0) <= 0.01 * len(top)
        c.note(f"{checked} report files validated against golden/synthetic_reports.json")
