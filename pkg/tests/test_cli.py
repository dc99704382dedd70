import io
import json
import subprocess
import sys

import numpy as np
import pytest

from mmphlab import cli
from mmphlab.config import Config
from mmphlab.mmphf import SortedKeySet, build, random_keys


def run(*argv):
    out = io.StringIO()
    code = cli.main([str(a) for a in argv], out)
    return code, out.getvalue()


def run_json(*argv):
    code, text = run(*argv)
    assert code == 0, text
    doc = json.loads(text)
    assert {"version", "schema", "seed", "params", "result"} <= set(doc)
    return doc["result"]


@pytest.fixture
def keyfile(tmp_path):
    p = tmp_path / "keys.txt"
    p.write_text("1\n6\n7\n13\n")
    return p


def test_build_query_stats(tmp_path, keyfile, capsys):
    out = tmp_path / "h.mmph"
    res = run_json("build", keyfile, "--u", 16, "--out", out, "--regime", "bucketed")
    assert res["regime"] == "bucketed" and res["n"] == 4 and res["bits"] > 0
    code, text = run("query", out, 7, 13)
    assert code == 0 and text.split() == ["3", "4"]
    code, text = run("query", out, 7, 16)
    assert code == cli.EXIT_DATA and text.split() == ["3"]
    assert "outside" in capsys.readouterr().err
    st = run_json("stats", out)
    assert sum(st["components"].values()) == st["bits"]


def test_build_default_picks_smallest(tmp_path, keyfile):
    res = run_json("build", keyfile, "--u", 16)
    ks = SortedKeySet(16, [1, 6, 7, 13])
    assert res["regime"] == build(ks).regime
    assert res["bits"] == build(ks).space_bits()


def test_build_plain_when_dense(tmp_path):
    p = tmp_path / "k.txt"
    p.write_text("\n".join(map(str, range(20))))
    res = run_json("build", p, "--u", 20)
    assert res["regime"] == "plain"


def test_build_errors(tmp_path, capsys):
    empty = tmp_path / "e.txt"
    empty.write_text("")
    assert run("build", empty)[0] == cli.EXIT_DATA
    assert "n >= 1 required" in capsys.readouterr().err
    bad = tmp_path / "b.txt"
    bad.write_text("3\n2\n")
    assert run("build", bad)[0] == cli.EXIT_DATA
    bad.write_text("1\nx\n")
    assert run("build", bad)[0] == cli.EXIT_DATA
    bad.write_text(f"{1 << 64}\n")
    assert run("build", bad)[0] == cli.EXIT_DATA
    ok = tmp_path / "k.txt"
    ok.write_text("5\n")
    assert run("build", ok, "--u", 3)[0] == cli.EXIT_DATA


def test_u64_input(tmp_path):
    keys = random_keys(np.random.default_rng(0), 1 << 64, 1000)
    p = tmp_path / "k.bin"
    p.write_bytes(keys.astype("<u8").tobytes())
    out = tmp_path / "h.mmph"
    res = run_json("build", p, "--format", "u64", "--u", str(1 << 64), "--out", out)
    assert res["n"] == 1000
    code, text = run("query", out, *[int(k) for k in keys[:50]])
    assert [int(t) for t in text.split()] == list(range(1, 51))
    p.write_bytes(b"123")
    assert run("build", p, "--format", "u64")[0] == cli.EXIT_DATA


def test_usage_errors():
    assert run("frobnicate")[0] == cli.EXIT_USAGE
    assert run("bounds")[0] == cli.EXIT_USAGE
    assert run("bounds", "--n", 2, "--config", "/nonexistent.cfg")[0] == cli.EXIT_USAGE


def test_bounds():
    res = run_json("bounds", "--u", 4, "--n", 2)
    assert res["weak_family_bound"] == 1.5
    assert abs(res["log_binom"] - 2.584962500721156) < 1e-9
    res = run_json("bounds", "--n", 4, "--log2-u", 1024)
    assert res["approximate"] is True


def test_min_family():
    res = run_json("lab", "min-family", "--u", 3, "--n", 2)
    assert res["C"] == 2 and res["verified"] is True and len(res["family"]) == 2
    code, text = run("lab", "min-family", "--u", 40, "--n", 10)
    assert code == cli.EXIT_BUDGET
    code, text = run("lab", "min-family", "--u", 4, "--n", 2, "--output-format", "csv")
    assert code == 0 and text.startswith("# mmphlab ")


def test_process_commands(tmp_path):
    res = run_json("lab", "process", "--n", 2, "--f", 2, "--coloring", "1,1,2,2")
    assert res["encoding_probability"]["value"] == 1.0
    assert res["encoding_probability"]["exact"] is True
    res = run_json("lab", "process", "--n", 2, "--f", 4, "--coloring", "random:3",
                   "--abnormal", "--census")
    assert "abnormal_last_block" in res and res["census"]
    res = run_json("lab", "process", "--n", 2, "--f", 4, "--coloring", "random:3",
                   "--mode", "mc", "--samples", 20000, "--workers", 2)
    assert res["encoding_probability"]["exact"] is False
    assert res["encoding_probability"]["ci99_halfwidth"] > 0
    seg = tmp_path / "seg.txt"
    seg.write_text("0,64,2\n64,256,1\n")
    res = run_json("lab", "density", "--n", 2, "--f", 4, "--coloring", seg, "--color", 1)
    assert res["S"]["0"] == [[0, 256]]
    res = run_json("lab", "census", "--n", 2, "--f", 4, "--stage", 2, "--level", 1)
    assert res[0]["reachable"] == 3
    code, _ = run("lab", "process", "--n", 3, "--f", 4, "--coloring", "random:1")
    assert code == cli.EXIT_BUDGET
    code, _ = run("lab", "process", "--n", 2, "--f", 2, "--coloring", "1,2")
    assert code == cli.EXIT_DATA


def test_bench_sweep_csv():
    code, text = run("bench", "sweep", "--n", 512, "--log-ratio", 4, 8)
    assert code == 0
    lines = text.splitlines()
    assert lines[0].startswith("# mmphlab ") and lines[1].startswith("n,log2_u_over_n,regime")
    assert len(lines) == 2 + 4
    assert run("bench", "sweep", "--n", 512, "--log-ratio", 60)[0] == cli.EXIT_DATA


@pytest.mark.parametrize("argv", [
    ("bench", "sweep", "--n", 1024, "--log-ratio", 4, 16, 40),
    ("lab", "process", "--n", 3, "--f", 3, "--coloring", "random:1", "--mode", "mc",
     "--samples", 50000, "--workers", 3),
    ("lab", "min-family", "--u", 6, "--n", 3),
    ("lab", "census", "--n", 3, "--f", 3),
])
def test_deterministic_output(argv):
    a, b = run(*argv), run(*argv)
    assert a[0] == 0 and a == b
    c = run(*argv, "--seed", 99)
    assert c[0] == 0
    assert run(*argv, "--seed", 99) == c


def test_build_query_agrees_with_in_process(tmp_path):
    rng = np.random.default_rng(21)
    for i in range(60):
        n = int(rng.integers(1, 400))
        u = int(min(1 << 64, n * 2 ** rng.uniform(0, 50))) + 1
        keys = random_keys(rng, u, n)
        src = tmp_path / f"k{i}.txt"
        src.write_text("\n".join(str(int(k)) for k in keys))
        out = tmp_path / f"k{i}.mmph"
        assert run("build", src, "--u", u, "--out", out, "--seed", i)[0] == 0
        h = build(SortedKeySet(u, keys), Config(seed=i))
        assert out.read_bytes() == h.to_bytes()
        qs = rng.integers(0, min(u, 1 << 63), size=20)
        code, text = run("query", out, *qs)
        assert code == 0
        assert [int(t) for t in text.split()] == h.rank_many(qs.astype(np.uint64)).tolist()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mmphlab", "bounds", "--u", "4", "--n", "2"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["result"]["n"] == 2
    r = subprocess.run([sys.executable, "-m", "mmphlab", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "mmphlab" in r.stdout
