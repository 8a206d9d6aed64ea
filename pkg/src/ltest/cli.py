"""Command-line front door: dataset ingestion, tests, sweeps, adjustment.

Subcommands:

    ltest test      run one test per named covariate group on a CSV dataset
    ltest simulate  run power/size sweeps from a JSON config
    ltest adjust    apply Holm or Benjamini-Hochberg to a file of p-values

Exit codes: 0 success, 2 usage/configuration, 3 data problems, 4 numerical
failures.  All randomized commands are byte-reproducible for a fixed --seed;
wall-clock timings are only emitted under --timing so default output stays
deterministic.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .affine import glasso_mc_test, l_test
from .classic import f_test
from .errors import (
    BadLevel,
    ConfigError,
    DataError,
    LTestError,
    MissingColumn,
    NonNumeric,
    ParseError,
    TooFewRows,
)
from .exact import mcfree_test
from .model import Design, build_model, sufficient_state
from .multitest import bh, holm
from .simulate import (
    ScenarioConfig,
    pc_test,
    phi_test,
    run_manifest,
    run_power_sweep,
    write_records_csv,
)
from .solvers import tune

_CLI_METHODS = ("f", "l", "mcfree", "glasso-mc", "pc", "phi")
_TUNED = ("l", "mcfree", "glasso-mc", "phi")
_INTERCEPT_NAME = "(intercept)"


@dataclass(frozen=True)
class DatasetSpec:
    """What to read and how to carve it into tested groups."""

    path: str
    response: str
    groups: dict  # name -> list of column names
    standardize: bool = False
    intercept: bool = False


def _read_table(path: str) -> tuple[list[str], np.ndarray]:
    """Header and float matrix from an RFC-4180-style CSV."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise ParseError(f"{path}: duplicate column names in header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                bad = next(v for v in row if not _is_float(v))
                raise NonNumeric(f"{path}:{lineno}: non-numeric field {bad!r}")
    if not rows:
        raise TooFewRows(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


def _is_float(v: str) -> bool:
    try:
        float(v)
    except ValueError:
        return False
    return True


def ingest(spec: DatasetSpec) -> tuple[list[tuple[str, Design, list[str]]], np.ndarray]:
    """Per-group designs (group columns first) plus the response vector.

    Column order within each design: the group's columns in declaration
    order, then the remaining covariates in file order, then the optional
    intercept column.  Standardization (zero mean, unit norm) never touches
    the intercept column.
    """
    header, table = _read_table(spec.path)
    if spec.response not in header:
        raise MissingColumn(f"response column {spec.response!r} not in header")
    covariates = [h for h in header if h != spec.response]
    y = table[:, header.index(spec.response)]

    col_of = {h: i for i, h in enumerate(header)}
    out = []
    for name, cols in spec.groups.items():
        if not cols:
            raise ConfigError(f"group {name!r} is empty")
        if len(set(cols)) != len(cols):
            raise MissingColumn(f"duplicate column in group {name!r}")
        if spec.response in cols:
            raise ConfigError(f"group {name!r} contains the response column")
        for c in cols:
            if c not in col_of:
                raise MissingColumn(f"group {name!r}: column {c!r} not in header")
        nuisance = [h for h in covariates if h not in set(cols)]
        ordered = list(cols) + nuisance
        X = table[:, [col_of[c] for c in ordered]]
        if spec.standardize:
            Xc = X - X.mean(axis=0)
            norms = np.linalg.norm(Xc, axis=0)
            zero = np.flatnonzero(norms == 0.0)
            if zero.size:
                raise NonNumeric(
                    f"column {ordered[zero[0]]!r} is constant; cannot standardize"
                )
            X = Xc / norms
        if spec.intercept:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
            ordered = ordered + [_INTERCEPT_NAME]
        n, d = X.shape
        if n <= d:
            raise TooFewRows(f"group {name!r}: need n > d, got n={n}, d={d}")
        out.append((name, Design(X=X, n=n, d=d, k=len(cols)), ordered))
    return out, y


def _parse_groups(raw: list[str]) -> dict:
    groups = {}
    for item in raw:
        if "=" not in item:
            raise ConfigError(f"--group expects name=col1,col2,... got {item!r}")
        name, _, cols = item.partition("=")
        name = name.strip()
        if not name:
            raise ConfigError(f"--group {item!r}: empty group name")
        if name in groups:
            raise ConfigError(f"--group {name!r} given twice")
        groups[name] = [c.strip() for c in cols.split(",") if c.strip()]
    return groups


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _emit_json(payload) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True, indent=2,
                                default=_json_default))
    sys.stdout.write("\n")


def _run_group_test(method, ctx, y, args, group_index):
    """One test with per-group child RNG streams (tuning, then MC)."""
    ss = np.random.SeedSequence(entropy=args.seed, spawn_key=(group_index,))
    rng_tune, rng_mc = (np.random.default_rng(c) for c in ss.spawn(2))
    tuning = None
    if method in _TUNED:
        state = sufficient_state(ctx, y)
        tuning = tune(ctx, state, rng_tune, folds=args.cv_folds,
                      repeats=args.tuning_repeats)
    if method == "f":
        return f_test(ctx, y), tuning
    if method == "l":
        return l_test(ctx, y, mc_samples=args.mc_samples, rng=rng_mc,
                      tuning=tuning), tuning
    if method == "mcfree":
        return mcfree_test(ctx, y, tuning=tuning), tuning
    if method == "glasso-mc":
        return glasso_mc_test(ctx, y, tuning.lam, mc_samples=args.mc_samples,
                              rng=rng_mc), tuning
    if method == "pc":
        return pc_test(ctx, y), tuning
    if method == "phi":
        return phi_test(ctx, y, tuning=tuning, mc_samples=args.mc_samples,
                        rng=rng_mc), tuning
    raise ConfigError(f"unknown method {method!r}")


def cmd_test(args) -> int:
    if not 0.0 < args.alpha < 1.0:
        raise BadLevel(f"--alpha must lie in (0, 1), got {args.alpha}")
    if args.mc_samples < 1:
        raise ConfigError(f"--mc-samples must be >= 1, got {args.mc_samples}")
    spec = DatasetSpec(
        path=args.data,
        response=args.response,
        groups=_parse_groups(args.group),
        standardize=args.standardize,
        intercept=args.intercept,
    )
    designs, y = ingest(spec)
    results = []
    for gi, (name, design, ordered) in enumerate(designs):
        t0 = time.perf_counter()
        ctx = build_model(design.X, design.k)
        outcome, tuning = _run_group_test(args.method, ctx, y, args, gi)
        elapsed = time.perf_counter() - t0
        entry = {
            "group": name,
            "columns": ordered[: design.k],
            "k": design.k,
            "n": design.n,
            "d": design.d,
            "method": outcome.method,
            "statistic": outcome.statistic,
            "p_value": outcome.p_value,
        }
        if outcome.mc_samples is not None:
            entry["mc_samples"] = outcome.mc_samples
        if tuning is not None:
            entry["lam"] = tuning.lam
            entry["b_star"] = [float(v) for v in tuning.b_star]
        if outcome.meta:
            entry["detail"] = {k: v for k, v in outcome.meta.items()
                               if k not in ("lam", "b_star")}
        if args.timing:
            entry["timing_s"] = round(elapsed, 6)
        results.append(entry)

    if args.out == "json":
        _emit_json({"schema": 1, "command": "test", "method": args.method,
                    "seed": args.seed, "alpha": args.alpha, "results": results})
    else:
        buf = io.StringIO()
        writer = csv.writer(buf)
        cols = ["group", "method", "k", "n", "d", "statistic", "p_value",
                "mc_samples", "lam"]
        writer.writerow(cols)
        for e in results:
            writer.writerow([
                e["group"], e["method"], e["k"], e["n"], e["d"],
                f"{e['statistic']:.10g}", f"{e['p_value']:.10g}",
                e.get("mc_samples", ""),
                f"{e['lam']:.10g}" if "lam" in e else "",
            ])
        sys.stdout.write(buf.getvalue())
    return 0


_SCENARIO_KEYS = {f.name for f in fields(ScenarioConfig)}
_TOP_KEYS = {"scenarios", "methods", "tuning_repeats"}


def _load_sim_config(path: str):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    scen_dicts = raw.get("scenarios")
    if not isinstance(scen_dicts, list) or not scen_dicts:
        raise ConfigError("config key 'scenarios' must be a nonempty list")
    configs = []
    for i, sd in enumerate(scen_dicts):
        if not isinstance(sd, dict):
            raise ConfigError(f"scenarios[{i}] must be an object")
        for key in sd:
            if key not in _SCENARIO_KEYS:
                raise ConfigError(f"unknown config key scenarios[{i}].{key}")
        configs.append(ScenarioConfig(**sd))
    methods = raw.get("methods", ["f", "l"])
    if not isinstance(methods, list) or not methods:
        raise ConfigError("config key 'methods' must be a nonempty list")
    repeats = raw.get("tuning_repeats", 1)
    if not isinstance(repeats, int) or repeats < 1:
        raise ConfigError("config key 'tuning_repeats' must be a positive integer")
    return configs, methods, repeats


def cmd_simulate(args) -> int:
    configs, methods, repeats = _load_sim_config(args.config)
    t0 = time.perf_counter()
    records = run_power_sweep(configs, methods, tuning_repeats=repeats)
    elapsed = time.perf_counter() - t0
    write_records_csv(records, args.out_csv, include_timing=args.timing)
    manifest = run_manifest(configs)
    manifest["methods"] = methods
    manifest["tuning_repeats"] = repeats
    manifest["version"] = __version__
    if args.timing:
        manifest["wall_time_s"] = round(elapsed, 3)
    with open(args.out_manifest, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")
    sys.stdout.write(
        f"wrote {len(records)} records to {args.out_csv}; "
        f"manifest in {args.out_manifest}\n"
    )
    return 0


def _read_pvalues(path: str, column: str | None) -> list[float]:
    """One p-value per line, or a named column of a CSV with a header."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc.strerror}") from exc
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    if all(_is_float(ln) for ln in lines):
        return [float(ln) for ln in lines]
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader)]
    if column is None:
        if len(header) == 1:
            idx = 0
        elif "p" in header:
            idx = header.index("p")
        elif "p_value" in header:
            idx = header.index("p_value")
        else:
            raise ParseError(
                f"{path}: cannot pick a p-value column from {header}; use --column"
            )
    else:
        if column not in header:
            raise MissingColumn(f"{path}: no column {column!r} in header")
        idx = header.index(column)
    values = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if idx >= len(row) or not _is_float(row[idx]):
            raise NonNumeric(f"{path}:{lineno}: bad p-value {row[idx:idx+1]!r}")
        values.append(float(row[idx]))
    return values


def _check_pvalue_range(path: str, values: list[float]) -> list[float]:
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise NonNumeric(f"{path}: p-value out of [0, 1]: {v!r}")
    return values


def cmd_adjust(args) -> int:
    if not 0.0 < args.level < 1.0:
        raise BadLevel(f"--level must lie in (0, 1), got {args.level}")
    pvals = _check_pvalue_range(args.pvalues, _read_pvalues(args.pvalues, args.column))
    proc = holm if args.procedure == "holm" else bh
    res = proc(pvals, args.level)
    rows = [
        {"index": i, "p": p, "rejected": bool(r)}
        for i, (p, r) in enumerate(zip(res.raw, res.rejected))
    ]
    if args.out == "json":
        _emit_json({"schema": 1, "command": "adjust",
                    "procedure": res.procedure, "level": res.level,
                    "n_rejected": res.n_rejected, "results": rows})
    else:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["index", "p", "rejected"])
        for row in rows:
            writer.writerow([row["index"], f"{row['p']:.10g}",
                             int(row["rejected"])])
        sys.stdout.write(buf.getvalue())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ltest",
        description="Exact tests for groups of linear-model coefficients.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_test = sub.add_parser("test", help="test named covariate groups in a CSV")
    p_test.add_argument("--data", required=True, help="CSV file with a header row")
    p_test.add_argument("--response", required=True, help="response column name")
    p_test.add_argument("--group", action="append", required=True,
                        metavar="NAME=COL1,COL2",
                        help="tested group (repeatable)")
    p_test.add_argument("--method", choices=_CLI_METHODS, default="l")
    p_test.add_argument("--alpha", type=float, default=0.05)
    p_test.add_argument("--mc-samples", type=int, default=200)
    p_test.add_argument("--seed", type=int, default=0)
    p_test.add_argument("--cv-folds", type=int, default=10)
    p_test.add_argument("--tuning-repeats", type=int, default=1)
    p_test.add_argument("--standardize", action="store_true",
                        help="zero-mean, unit-norm columns before testing")
    p_test.add_argument("--intercept", action="store_true",
                        help="append a constant column to the nuisance block")
    p_test.add_argument("--out", choices=("json", "csv"), default="json")
    p_test.add_argument("--timing", action="store_true",
                        help="include wall-clock timings (non-deterministic)")
    p_test.add_argument("--threads", type=int, default=1,
                        help="reserved; execution is single-threaded")
    p_test.set_defaults(func=cmd_test)

    p_sim = sub.add_parser("simulate", help="run sweeps from a JSON config")
    p_sim.add_argument("--config", required=True, help="JSON scenario file")
    p_sim.add_argument("--out-csv", default="results.csv")
    p_sim.add_argument("--out-manifest", default="manifest.json")
    p_sim.add_argument("--timing", action="store_true",
                       help="include wall-clock timings (non-deterministic)")
    p_sim.add_argument("--threads", type=int, default=1,
                       help="reserved; execution is single-threaded")
    p_sim.set_defaults(func=cmd_simulate)

    p_adj = sub.add_parser("adjust", help="multiple-testing adjustment")
    p_adj.add_argument("--pvalues", required=True,
                       help="file with one p-value per line, or a CSV")
    p_adj.add_argument("--procedure", choices=("holm", "bh"), required=True)
    p_adj.add_argument("--level", type=float, required=True)
    p_adj.add_argument("--column", default=None,
                       help="CSV column holding p-values (default: 'p')")
    p_adj.add_argument("--out", choices=("json", "csv"), default="json")
    p_adj.set_defaults(func=cmd_adjust)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, BadLevel) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except LTestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
