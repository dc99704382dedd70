"""Command-line front end: ``mmphlab <command> ...``.

Every report is JSON (or CSV for sweeps) with a ``{version, seed, params}``
header so a run can be replayed.  Exit codes: 0 ok, 2 usage, 3 bad data,
4 budget exceeded.
"""
import argparse
import csv
import io
import json
import sys
import time
from fractions import Fraction

import numpy as np

from . import __version__
from . import coloring as col
from . import mmphf
from . import process as proc
from .config import REGIMES, load_config
from .errors import BudgetExceededError, MmphError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BUDGET = 0, 2, 3, 4
SCHEMA = 1


class DataError(Exception):
    pass


def _jsonable(v):
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (tuple, set)):
        return [_jsonable(x) for x in v]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, int) and abs(v) >= 1 << 63:
        return str(v)
    return v


def _emit(out, cfg, params, result, fmt=None):
    fmt = fmt or cfg.output_format
    if fmt == "csv":
        rows = result if isinstance(result, list) else [result]
        out.write(f"# mmphlab {__version__} schema={SCHEMA} seed={cfg.seed} "
                  f"params={json.dumps(_jsonable(params), sort_keys=True)}\n")
        if rows:
            flat = [{k: (json.dumps(_jsonable(v)) if isinstance(v, (dict, list, tuple)) else
                         _jsonable(v)) for k, v in r.items()} for r in rows]
            w = csv.DictWriter(out, fieldnames=list(flat[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(flat)
        return
    doc = {"version": __version__, "schema": SCHEMA, "seed": cfg.seed,
           "params": _jsonable(params), "result": _jsonable(result)}
    out.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- input helpers ---------------------------------------------------------


def read_keys(path, fmt="text"):
    if fmt == "u64":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) % 8:
            raise DataError("u64 input length is not a multiple of 8 bytes")
        return np.frombuffer(raw, dtype="<u8").astype(np.uint64)
    vals = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                v = int(s, 0)
            except ValueError:
                raise DataError(f"{path}:{lineno}: not an integer: {s!r}") from None
            if v < 0 or v >> 64:
                raise DataError(f"{path}:{lineno}: key {v} outside [0..2**64)")
            vals.append(v)
    return np.array(vals, dtype=np.uint64)


def read_coloring(spec, u, n):
    """Comma list, ``random:<seed>``, or a file of colors / ``start,end,color`` lines."""
    if spec.startswith("random"):
        seed = int(spec.split(":", 1)[1]) if ":" in spec else 0
        rng = proc.make_rng(seed)
        return col.Coloring(rng.integers(1, n + 1, size=u), n)
    if "," in spec and not _is_file(spec):
        colors = [int(t) for t in spec.split(",") if t.strip()]
        return col.Coloring(_check_len(colors, u), n)
    with open(spec) as fh:
        lines = [ln.split("#", 1)[0].strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if lines and all(len(ln.split(",")) == 3 for ln in lines):
        segs = [tuple(int(t) for t in ln.split(",")) for ln in lines]
        return col.Coloring.from_segments(segs, u, n)
    colors = [int(t) for ln in lines for t in ln.replace(",", " ").split()]
    return col.Coloring(_check_len(colors, u), n)


def _is_file(s):
    try:
        with open(s):
            return True
    except OSError:
        return False


def _check_len(colors, u):
    if len(colors) != u:
        raise DataError(f"coloring has {len(colors)} entries, universe has {u}")
    return colors


# -- commands --------------------------------------------------------------


def cmd_build(args, cfg, out):
    keys = read_keys(args.input, args.format)
    if keys.size == 0:
        raise DataError("n >= 1 required")
    u = args.u if args.u is not None else int(keys.max()) + 1
    ks = mmphf.SortedKeySet(u, keys)
    if ks.n > u:
        raise DataError("n exceeds u")
    h = mmphf.build(ks, cfg)
    if args.out:
        mmphf.save(h, args.out)
    bits = h.space_bits()
    _emit(out, cfg, {"input": args.input, "u": u, "regime": cfg.regime,
                     "plain_cutoff": cfg.plain_cutoff},
          {"regime": h.regime, "n": h.n, "u": h.u, "bits": bits, "bits_per_key": bits / h.n})


def cmd_query(args, cfg, out):
    h = mmphf.load(args.structure)
    failed = False
    for raw in args.x:
        try:
            x = int(raw, 0)
            out.write(f"{h.rank(x)}\n")
        except (ValueError, MmphError) as exc:
            failed = True
            sys.stderr.write(f"error: {raw}: {exc}\n")
    return EXIT_DATA if failed else EXIT_OK


def cmd_stats(args, cfg, out):
    h = mmphf.load(args.structure)
    rep = h.space_report()
    _emit(out, cfg, {"structure": args.structure},
          {"regime": h.regime, "n": h.n, "u": h.u, "bits": h.space_bits(),
           "bits_per_key": h.space_bits() / h.n, "components": rep})


def cmd_bounds(args, cfg, out):
    if args.log2_u is not None:
        rep = col.bound_report(n=args.n, log2_u=args.log2_u)
    elif args.u is None:
        raise DataError("need --u or --log2-u")
    else:
        rep = col.bound_report(args.u, args.n)
    _emit(out, cfg, {"u": args.u, "n": args.n, "log2_u": args.log2_u}, rep.as_dict())


def cmd_min_family(args, cfg, out):
    r = col.min_family_size(args.u, args.n, max_sequences=cfg.max_sequences,
                            max_columns=cfg.max_columns)
    res = {"C": r.size, "family": [list(f) for f in r.family],
           "weak_bound": float(r.weak_bound), "weak_bound_exact": r.weak_bound,
           "sequences": r.sequences, "candidates": r.candidates, "nodes": r.nodes,
           "verified": col.is_all_encoding(r.family, args.u, args.n)}
    params = {"u": args.u, "n": args.n}
    if cfg.output_format == "csv":
        res = [{"u": args.u, "n": args.n, "C": r.size, "weak_bound": float(r.weak_bound),
                "member": i, "coloring": " ".join(map(str, f))} for i, f in enumerate(r.family)]
    _emit(out, cfg, params, res)


def cmd_process(args, cfg, out):
    p = proc.make_params(args.n, args.f, args.lastlen, mc_only=args.mode == "mc")
    c = read_coloring(args.coloring, p.u, p.n)
    mode = "exact" if args.mode == "exact" else "montecarlo"
    kw = dict(samples=args.samples, seed=cfg.seed, workers=args.workers,
              max_outcomes=cfg.max_outcomes)
    res = {"encoding_probability": proc.encoding_probability(p, c, mode, **kw).as_dict()}
    if args.abnormal:
        res["abnormal_last_block"] = proc.abnormal_last_block_probability(p, c, mode, **kw).as_dict()
    if args.census:
        res["census"] = [x.as_dict() for x in proc.census_all(p, cfg.max_outcomes)]
    params = dict(p.as_dict(), coloring=args.coloring, mode=args.mode, samples=args.samples)
    _emit(out, cfg, params, res)


def cmd_density(args, cfg, out):
    p = proc.make_params(args.n, args.f, args.lastlen)
    c = read_coloring(args.coloring, p.u, p.n)
    i = args.color
    if not 1 <= i < p.n:
        raise DataError(f"--color must be in [1..{p.n - 1}]")
    l0 = args.level_start
    H = (l0, l0 + p.span(i))
    blen = p.block_len(l0)
    B = (args.block_start, args.block_start + blen)
    prof = proc.density_profile(p, c, B, H, i)
    _emit(out, cfg, dict(p.as_dict(), coloring=args.coloring, color=i, H=list(H), B=list(B)),
          prof.as_dict())


def cmd_census(args, cfg, out):
    p = proc.make_params(args.n, args.f, args.lastlen)
    if args.stage is not None and args.level is not None:
        rows = [proc.reachability_census(p, args.stage, args.level, cfg.max_outcomes).as_dict()]
    else:
        rows = [x.as_dict() for x in proc.census_all(p, cfg.max_outcomes)]
        if args.stage is not None:
            rows = [r for r in rows if r["stage"] == args.stage]
    _emit(out, cfg, p.as_dict(), rows)


def cmd_bench_sweep(args, cfg, out):
    rng = proc.make_rng(cfg.seed)
    rows = []
    for ratio_log in args.log_ratio:
        u = args.n << ratio_log
        if u > 1 << 64:
            raise DataError(f"u = n * 2**{ratio_log} exceeds 2**64")
        keys = mmphf.random_keys(rng, u, args.n)
        ks = mmphf.SortedKeySet(u, keys)
        t0 = time.perf_counter()
        cands = mmphf.build_candidates(ks, cfg)
        t1 = time.perf_counter()
        for name, h in sorted(cands.items()):
            row = {"n": args.n, "log2_u_over_n": ratio_log, "regime": name,
                   "bits": h.space_bits(), "bits_per_key": round(h.space_bits() / args.n, 6)}
            if args.timing:
                q0 = time.perf_counter()
                h.rank_many(keys)
                row["build_s"] = round(t1 - t0, 6)
                row["query_ns_per_key"] = round((time.perf_counter() - q0) / args.n * 1e9, 1)
            rows.append(row)
    _emit(out, cfg, {"n": args.n, "log_ratio": args.log_ratio}, rows,
          fmt=args.format or "csv")


# -- parser ----------------------------------------------------------------


def _common(sp):
    sp.add_argument("--config", help="key=value configuration file")
    sp.add_argument("--seed", type=lambda s: int(s, 0), help="master seed (default $MMPHLAB_SEED)")
    sp.add_argument("--output-format", choices=("json", "csv"))


def build_parser():
    ap = argparse.ArgumentParser(prog="mmphlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"mmphlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("build", help="build a structure from sorted keys")
    sp.add_argument("input")
    sp.add_argument("--u", type=lambda s: int(s, 0))
    sp.add_argument("--out")
    sp.add_argument("--format", choices=("text", "u64"), default="text")
    sp.add_argument("--regime", choices=REGIMES)
    sp.add_argument("--plain-cutoff", type=int)
    sp.add_argument("--inner-bucket-size", type=int)
    _common(sp)
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("query", help="rank queries against a saved structure")
    sp.add_argument("structure")
    sp.add_argument("x", nargs="+")
    _common(sp)
    sp.set_defaults(func=cmd_query)

    sp = sub.add_parser("stats", help="space breakdown of a saved structure")
    sp.add_argument("structure")
    _common(sp)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("bounds", help="entropy and counting bounds")
    sp.add_argument("--u", type=lambda s: int(s, 0))
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--log2-u", type=float, help="use u = 2**LOG2_U in the log domain")
    _common(sp)
    sp.set_defaults(func=cmd_bounds)

    lab = sub.add_parser("lab", help="lower-bound experiments")
    lsub = lab.add_subparsers(dest="lab_command", required=True)

    sp = lsub.add_parser("min-family", help="exact minimum all-encoding family")
    sp.add_argument("--u", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    _common(sp)
    sp.set_defaults(func=cmd_min_family)

    def proc_args(sp, coloring=True):
        sp.add_argument("--n", type=int, required=True)
        sp.add_argument("--f", type=int, required=True)
        sp.add_argument("--lastlen", type=int, default=1)
        if coloring:
            sp.add_argument("--coloring", required=True,
                            help="comma list, random:<seed>, or a file")
        _common(sp)

    sp = lsub.add_parser("process", help="encoding probability under the block process")
    proc_args(sp)
    sp.add_argument("--mode", choices=("exact", "mc"), default="exact")
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--abnormal", action="store_true", help="also report abnormal final blocks")
    sp.add_argument("--census", action="store_true", help="also report reachability")
    sp.set_defaults(func=cmd_process)

    sp = lsub.add_parser("density", help="sparse/dense profile of one block")
    proc_args(sp)
    sp.add_argument("--color", type=int, default=1)
    sp.add_argument("--level-start", type=int, default=0)
    sp.add_argument("--block-start", type=int, default=0)
    sp.set_defaults(func=cmd_density)

    sp = lsub.add_parser("census", help="reachability of blocks per stage and level")
    proc_args(sp, coloring=False)
    sp.add_argument("--stage", type=int)
    sp.add_argument("--level", type=int)
    sp.set_defaults(func=cmd_census)

    bench = sub.add_parser("bench", help="space/time sweeps")
    bsub = bench.add_subparsers(dest="bench_command", required=True)
    sp = bsub.add_parser("sweep", help="bits per key across u/n")
    sp.add_argument("--n", type=int, default=1 << 14)
    sp.add_argument("--log-ratio", type=int, nargs="+", default=[2, 4, 8, 16, 32, 48])
    sp.add_argument("--format", choices=("json", "csv"))
    sp.add_argument("--timing", action="store_true", help="add wall-clock columns")
    _common(sp)
    sp.set_defaults(func=cmd_bench_sweep)
    return ap


def main(argv=None, out=None):
    out = out or sys.stdout
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = load_config(args.config, seed=args.seed, output_format=args.output_format,
                          regime=getattr(args, "regime", None),
                          plain_cutoff=getattr(args, "plain_cutoff", None),
                          inner_bucket_size=getattr(args, "inner_bucket_size", None))
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"error: config: {exc}\n")
        return EXIT_USAGE
    try:
        buf = io.StringIO()
        code = args.func(args, cfg, buf)
        out.write(buf.getvalue())
        return code or EXIT_OK
    except BudgetExceededError as exc:
        sys.stderr.write(f"error: budget exceeded: {exc}\n")
        return EXIT_BUDGET
    except (DataError, MmphError, ValueError, OSError, OverflowError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
