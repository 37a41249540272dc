"""Command-line harness: multi-seed experiments, aggregation and reports.

    raresim run config.json [--out DIR] [--n-runs K] [--seed S] [--mode M]
    raresim report DIR
    raresim bench list
"""

import argparse
import csv
import dataclasses
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .engine import MODES, RunConfig, SubsetSimulationError, run
from .limit_states import BENCHMARKS, REFERENCE_PF, EvaluationError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUN_FAILURES = 2
FAILURE_LIMIT = 0.2

RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"seed"}
SPEC_KEYS = {"n_runs", "seed", "seeds", "sweep", "reference_pf", "baseline", "out", "workers"}

AGGREGATE_COLUMNS = [
    "benchmark", "d", "mode", "p0", "N", "n_runs", "n_failed",
    "pf_reference", "pf_standard_mean", "pf_mean", "pf_std",
    "rel_error", "rel_error_standard", "mean_n0", "mean_evals", "mean_evals_standard",
]
TABLE_HEADER = ["E[P_F^MC]", "E[P_F^SuS]", "E[P_F^Local]", "sd[P_F^Local]", "eps", "eps0",
                "E[N0]", "E[N_Total^]", "E[N_Total]"]


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ExperimentSpec:
    base: RunConfig
    n_runs: int = 20
    seeds: list = field(default_factory=list)
    p0_values: list = field(default_factory=list)
    N_values: list = field(default_factory=list)
    reference_pf: float = None
    baseline: bool = True
    out: str = "results"
    workers: int = 1

    def cells(self):
        for p0 in self.p0_values:
            for N in self.N_values:
                yield p0, N


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _check_number(path, value, lo=None, hi=None, integer=False, lo_open=False, hi_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, "must be a number")
    if integer and (not float(value).is_integer()):
        raise ConfigError(path, "must be an integer")
    if lo is not None and (value < lo or (lo_open and value == lo)):
        raise ConfigError(path, f"out of range (must be {'>' if lo_open else '>='} {lo})")
    if hi is not None and (value > hi or (hi_open and value == hi)):
        raise ConfigError(path, f"out of range (must be {'<' if hi_open else '<='} {hi})")
    return int(value) if integer else float(value)


def spec_from_dict(doc, overrides=None):
    if not isinstance(doc, dict):
        raise ConfigError("$", "config must be a JSON object")
    doc = dict(doc)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if "seed" in overrides or "n_runs" in overrides:
        doc.pop("seeds", None)
    for key, val in overrides.items():
        if val is not None:
            doc[key] = val
    unknown = sorted(set(doc) - RUN_KEYS - SPEC_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    if "benchmark" not in doc:
        raise ConfigError("benchmark", "missing required key")
    if doc["benchmark"] not in BENCHMARKS:
        raise ConfigError("benchmark", f"unknown benchmark id {doc['benchmark']!r}")
    mode = doc.get("mode", "standard")
    if mode not in MODES:
        raise ConfigError("mode", f"must be one of {list(MODES)}")
    run_kw = {k: v for k, v in doc.items() if k in RUN_KEYS}
    if "d" in run_kw and run_kw["d"] is not None:
        run_kw["d"] = _check_number("d", run_kw["d"], lo=1, integer=True)
    if "p0" in run_kw:
        run_kw["p0"] = _check_number("p0", run_kw["p0"], 0, 1, lo_open=True, hi_open=True)
    if "N" in run_kw:
        run_kw["N"] = _check_number("N", run_kw["N"], lo=10, integer=True)
    if "gamma_T" in run_kw:
        run_kw["gamma_T"] = _check_number("gamma_T", run_kw["gamma_T"], lo=0, lo_open=True)
    if "max_levels" in run_kw:
        run_kw["max_levels"] = _check_number("max_levels", run_kw["max_levels"], lo=1, integer=True)
    if "benchmark_params" in run_kw and not isinstance(run_kw["benchmark_params"], dict):
        raise ConfigError("benchmark_params", "must be an object")

    sweep = doc.get("sweep", {})
    if not isinstance(sweep, dict):
        raise ConfigError("sweep", "must be an object")
    bad = sorted(set(sweep) - {"p0", "N"})
    if bad:
        raise ConfigError(f"sweep.{bad[0]}", "unknown key")
    p0_values = sweep.get("p0", [run_kw.get("p0", 0.1)])
    N_values = sweep.get("N", [run_kw.get("N", 1000)])
    for name, vals in (("p0", p0_values), ("N", N_values)):
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"sweep.{name}", "must be a non-empty list")
    p0_values = [_check_number(f"sweep.p0[{i}]", v, 0, 1, lo_open=True, hi_open=True)
                 for i, v in enumerate(p0_values)]
    N_values = [_check_number(f"sweep.N[{i}]", v, lo=10, integer=True) for i, v in enumerate(N_values)]

    n_runs = _check_number("n_runs", doc.get("n_runs", 20), lo=1, integer=True)
    if "seeds" in doc:
        seeds = doc["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seeds", "must be a non-empty list")
        seeds = [_check_number(f"seeds[{i}]", s, lo=0, integer=True) for i, s in enumerate(seeds)]
        n_runs = len(seeds)
    else:
        base = _check_number("seed", doc.get("seed", 1), lo=0, integer=True)
        seeds = [base + i for i in range(n_runs)]
    ref = doc.get("reference_pf")
    if ref is None:
        ref = REFERENCE_PF.get(doc["benchmark"])
        if doc["benchmark"] == "g11" and "beta" in run_kw.get("benchmark_params", {}):
            ref = None
    else:
        ref = _check_number("reference_pf", ref, 0, 1, lo_open=True, hi_open=True)
    baseline = doc.get("baseline", True)
    if not isinstance(baseline, bool):
        raise ConfigError("baseline", "must be true or false")
    workers = _check_number("workers", doc.get("workers", 1), lo=1, integer=True)
    out = doc.get("out", "results")
    if not isinstance(out, str):
        raise ConfigError("out", "must be a string")

    try:
        base_cfg = RunConfig(**run_kw, seed=seeds[0])
        for p0 in p0_values:
            for N in N_values:
                dataclasses.replace(base_cfg, p0=p0, N=N)
    except ValueError as exc:
        key = "p0" if "p0" in str(exc) else "N" if "N" in str(exc) else "$"
        raise ConfigError(key, str(exc)) from None
    return ExperimentSpec(base_cfg, n_runs, seeds, p0_values, N_values, ref, baseline, out, workers)


def parse_config(path, overrides=None):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("$", f"cannot read {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from None
    return spec_from_dict(doc, overrides)


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def cell_name(cfg):
    d = "default" if cfg.d is None else cfg.d
    return f"{cfg.benchmark}-d{d}-{cfg.mode}-p0_{cfg.p0:g}-N{cfg.N}"


def _execute(cfg):
    try:
        return run(cfg).to_dict()
    except (SubsetSimulationError, EvaluationError, ValueError, np.linalg.LinAlgError) as exc:
        return {"version": __version__, "config": cfg.to_dict(), "error": f"{type(exc).__name__}: {exc}"}


def _dump(record):
    return json.dumps(record, sort_keys=True, indent=2, allow_nan=False) + "\n"


def run_experiment(spec, log=None):
    """Run every cell and seed; write per-run JSON, aggregate.csv, plotdata.csv."""
    out = Path(spec.out)
    modes = [spec.base.mode]
    if spec.baseline and spec.base.mode != "standard":
        modes.insert(0, "standard")
    jobs = []
    for p0, N in spec.cells():
        for mode in modes:
            for seed in spec.seeds:
                jobs.append(dataclasses.replace(spec.base, p0=p0, N=N, mode=mode, seed=seed))
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            records = list(pool.map(_execute, jobs))
    else:
        records = []
        for cfg in jobs:
            records.append(_execute(cfg))
            if log:
                rec = records[-1]
                status = rec.get("error") or f"pf={rec['pf']:.4g} evals={rec['n_total']}"
                log(f"{cell_name(cfg)} seed={cfg.seed}: {status}")
    for cfg, rec in zip(jobs, records):
        rec["reference_pf"] = spec.reference_pf
        path = out / "runs" / cell_name(cfg) / f"{cfg.seed}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(_dump(rec), encoding="utf-8")
    rows = aggregate(records)
    write_csv(out / "aggregate.csv", AGGREGATE_COLUMNS, rows)
    write_csv(out / "plotdata.csv", ["mode", "p0", "N", "mean_evals", "rel_error"], plot_rows(rows))
    n_failed = sum("error" in r for r in records)
    return rows, n_failed, len(records)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def _cell_key(cfg):
    return (cfg["benchmark"], cfg["d"], cfg["p0"], cfg["N"])


def aggregate(records):
    """One row per (benchmark, d, mode, p0, N); standard runs pair by seed."""
    groups = {}
    for rec in records:
        cfg = rec["config"]
        groups.setdefault(_cell_key(cfg), {}).setdefault(cfg["mode"], []).append(rec)
    rows = []
    for key in sorted(groups, key=lambda k: (k[0], -1 if k[1] is None else k[1], k[2], k[3])):
        by_mode = groups[key]
        std_ok = {r["config"]["seed"]: r for r in by_mode.get("standard", []) if "error" not in r}
        for mode in sorted(by_mode, key=lambda m: MODES.index(m)):
            recs = by_mode[mode]
            ok = [r for r in recs if "error" not in r]
            ref = next((r.get("reference_pf") for r in recs if r.get("reference_pf")), None)
            row = {
                "benchmark": key[0], "d": key[1], "mode": mode, "p0": key[2], "N": key[3],
                "n_runs": len(recs), "n_failed": len(recs) - len(ok), "pf_reference": ref,
                "pf_standard_mean": None, "pf_mean": None, "pf_std": None, "rel_error": None,
                "rel_error_standard": None, "mean_n0": None, "mean_evals": None,
                "mean_evals_standard": None,
            }
            if ok:
                pf = np.array([r["pf"] for r in ok])
                row["pf_mean"] = float(pf.mean())
                row["pf_std"] = float(pf.std(ddof=1)) if len(pf) > 1 else 0.0
                row["mean_n0"] = float(np.mean([r["n0"] for r in ok]))
                row["mean_evals"] = float(np.mean([r["n_total"] for r in ok]))
                if ref:
                    row["rel_error"] = abs(row["pf_mean"] - ref) / ref
                paired = [(r, std_ok[r["config"]["seed"]]) for r in ok if r["config"]["seed"] in std_ok]
                if paired:
                    std_mean = float(np.mean([s["pf"] for _, s in paired]))
                    row["pf_standard_mean"] = std_mean
                    row["mean_evals_standard"] = float(np.mean([s["n_total"] for _, s in paired]))
                    if mode != "standard" and std_mean > 0:
                        loc_mean = float(np.mean([r["pf"] for r, _ in paired]))
                        row["rel_error_standard"] = abs(loc_mean - std_mean) / std_mean
            rows.append(row)
    return rows


def plot_rows(rows):
    out = []
    for row in rows:
        err = row["rel_error"] if row["rel_error"] is not None else row["rel_error_standard"]
        out.append({"mode": row["mode"], "p0": row["p0"], "N": row["N"],
                    "mean_evals": row["mean_evals"], "rel_error": err})
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    path.write_bytes(buf.getvalue().encode("utf-8"))


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def load_records(directory):
    directory = Path(directory)
    records = []
    for path in sorted(directory.glob("runs/*/*.json")):
        try:
            rec = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"unreadable result file {path}: {exc}") from None
        if not isinstance(rec, dict) or "config" not in rec:
            raise ValueError(f"{path} is not a run record")
        records.append(rec)
    return records


def _sci(v, digits=2):
    return "-" if v is None else f"{v:.{digits}e}"


def _flt(v, digits=3):
    return "-" if v is None else f"{v:.{digits}g}"


def table_rows(rows):
    """Summary rows: case label followed by the nine metric columns."""
    out = []
    for row in rows:
        if row["mode"] == "standard" and len([r for r in rows if _cell(r) == _cell(row)]) > 1:
            continue
        local = row["mode"] != "standard"
        out.append([
            f"{row['benchmark']} d={row['d'] if row['d'] is not None else '-'} {row['mode']} "
            f"p0={row['p0']:g} N={row['N']}",
            _sci(row["pf_reference"]),
            _sci(row["pf_standard_mean"] if local else row["pf_mean"]),
            _sci(row["pf_mean"] if local else None),
            _sci(row["pf_std"]),
            _flt(row["rel_error"], 2),
            _flt(row["rel_error_standard"], 2),
            _flt(row["mean_n0"], 4),
            _flt(row["mean_evals"], 5),
            _flt(row["mean_evals_standard"] if local else row["mean_evals"], 5),
        ])
    return out


def _cell(row):
    return (row["benchmark"], row["d"], row["p0"], row["N"])


def report(directory, stream=None):
    stream = sys.stdout if stream is None else stream
    records = load_records(directory)
    if not records:
        print(f"no results in {directory}", file=stream)
        return EXIT_INVALID
    rows = aggregate(records)
    by_bench = {}
    for row in rows:
        by_bench.setdefault(row["benchmark"], []).append(row)
    header = ["Case"] + TABLE_HEADER
    for bench, brows in by_bench.items():
        print(f"== {bench} ==", file=stream)
        table = [header] + table_rows(brows)
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        for r in table:
            print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip(), file=stream)
        failed = sum(r["n_failed"] for r in brows)
        if failed:
            print(f"({failed} failed runs excluded)", file=stream)
        if bench == "g2":
            print("note: the g2 reference cost E[N_Total] = 2800 corresponds to N = 1000 "
                  "(two intermediate levels), not N = 10000; the harness default is N = 1000.", file=stream)
        print(file=stream)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def bench_list(stream=None):
    stream = sys.stdout if stream is None else stream
    print(f"{'id':16s} {'d':>4s} {'reference P_F':>14s}  description", file=stream)
    for name, (desc, dim) in BENCHMARKS.items():
        ref = REFERENCE_PF.get(name)
        print(f"{name:16s} {dim:>4d} {ref:>14.3g}  {desc}", file=stream)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="raresim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"raresim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--n-runs", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--quiet", action="store_true")
    rep = sub.add_parser("report", help="summarise a results directory")
    rep.add_argument("directory")
    b = sub.add_parser("bench", help="benchmark catalogue")
    b.add_argument("action", choices=["list"])
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "bench":
        return bench_list()
    if args.command == "report":
        if not Path(args.directory).is_dir():
            print(f"no results: {args.directory} is not a directory", file=sys.stderr)
            return EXIT_INVALID
        try:
            return report(args.directory)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
    overrides = {"out": args.out, "n_runs": args.n_runs, "seed": args.seed, "mode": args.mode}
    try:
        spec = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_INVALID
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    rows, n_failed, n_total = run_experiment(spec, log)
    report(spec.out)
    if n_failed > FAILURE_LIMIT * n_total:
        print(f"{n_failed} of {n_total} runs failed", file=sys.stderr)
        return EXIT_RUN_FAILURES
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
