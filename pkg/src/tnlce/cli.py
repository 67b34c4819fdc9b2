"""Batch experiment driver: prepare, estimate, extrapolate, bench.

One JSON config drives every stage.  CSV outputs hold only deterministic
columns (plus a config hash and code version per row for provenance);
wall-clock timings and solver diagnostics go to a JSON sidecar so reruns
are byte-identical.

Exit codes: 0 success, 1 config error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bp import BPError
from .estimator import (
    EstimatorError,
    energy_series,
    expansion_series,
    prepare_network,
)
from .extrapolate import ExtrapolationError, extrapolate
from .gauge_su import (
    EquilibrationError,
    GaugeError,
    load_state,
    save_state,
    su_ground_state,
)
from .models import PAULI_X, PAULI_Y, PAULI_Z, Model, ModelError, heisenberg, tfim
from .oracle import OracleError, exact_expectation, model_energy
from .tensor import TensorError
from .tngraph import GraphError, build_lattice

NUMERIC_ERRORS = (
    BPError,
    EquilibrationError,
    EstimatorError,
    ExtrapolationError,
    GaugeError,
    OracleError,
    TensorError,
    ModelError,
    np.linalg.LinAlgError,
)

_PAULI = {"x": PAULI_X, "y": PAULI_Y, "z": PAULI_Z}


class ConfigError(ValueError):
    pass


def _need(cfg: dict, key: str, kind, where: str):
    if key not in cfg:
        raise ConfigError(f"{where}: missing required key {key!r}")
    val = cfg[key]
    if kind is float and isinstance(val, int):
        val = float(val)
    if not isinstance(val, kind):
        raise ConfigError(
            f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {val!r}"
        )
    return val


def load_config(path) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    lattice = _need(cfg, "lattice", dict, "config")
    dims = _need(lattice, "dims", list, "lattice")
    if not dims or any(not isinstance(d, int) or d < 2 for d in dims):
        raise ConfigError("lattice.dims: need a list of integer extents >= 2")
    periodic = lattice.get("periodic", False)
    if not isinstance(periodic, (bool, list)):
        raise ConfigError("lattice.periodic: expected bool or per-axis list")
    model = _need(cfg, "model", dict, "config")
    name = _need(model, "name", str, "model")
    if name not in ("tfim", "heisenberg"):
        raise ConfigError(f"model.name: unknown model {name!r}")
    if name == "tfim":
        _need(model, "bx", (int, float), "model")
    prep = cfg.get("prepare", {})
    d_target = prep.get("d_target", 2)
    if not isinstance(d_target, int) or d_target < 1:
        raise ConfigError("prepare.d_target: expected a positive integer")
    est = cfg.get("estimate", {})
    c_max = est.get("c_max", 6)
    if not isinstance(c_max, int) or c_max < 1:
        raise ConfigError("estimate.c_max: expected a positive integer")
    if est.get("formula", "product") not in ("product", "sum", "both"):
        raise ConfigError("estimate.formula: expected product, sum, or both")


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def build_model(cfg: dict) -> Model:
    lattice = cfg["lattice"]
    try:
        g = build_lattice(tuple(lattice["dims"]), lattice.get("periodic", False))
    except GraphError as exc:
        raise ConfigError(f"lattice: {exc}") from exc
    model = cfg["model"]
    if model["name"] == "tfim":
        return tfim(g, float(model["bx"]))
    return heisenberg(g)


def parse_observable(spec: str, model: Model):
    """'energy' or '<pauli>:<site>' or '<pauli><pauli>:<i>,<j>'."""
    if spec == "energy":
        return ("energy", None, None)
    if ":" not in spec:
        raise ConfigError(f"observable {spec!r}: expected 'energy' or 'op:sites'")
    opname, _, sitespec = spec.partition(":")
    try:
        sites = tuple(int(s) for s in sitespec.split(","))
    except ValueError:
        raise ConfigError(f"observable {spec!r}: bad site list {sitespec!r}")
    opname = opname.lower()
    if any(ch not in _PAULI for ch in opname) or not opname:
        raise ConfigError(f"observable {spec!r}: unknown operator {opname!r}")
    if len(opname) == 1 and len(sites) == 1:
        return (spec, _PAULI[opname], sites)
    if len(opname) == 2 and len(sites) == 2:
        op = np.kron(_PAULI[opname[0]], _PAULI[opname[1]])
        return (spec, op, sites)
    raise ConfigError(f"observable {spec!r}: operator/site arity mismatch")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _fmt(value: float) -> str:
    return np.format_float_scientific(value, precision=16)


def cmd_prepare(args) -> int:
    cfg = load_config(args.config)
    model = build_model(cfg)
    prep = cfg.get("prepare", {})
    initial = None
    if args.resume:
        initial = load_state(args.resume)
        if initial.graph.bonds != model.graph.bonds:
            raise ConfigError(
                f"resume state {args.resume} was built on a different lattice"
            )
    history: list = []
    t0 = time.perf_counter()
    state = su_ground_state(
        model,
        d_target=prep.get("d_target", 2),
        tau_scale=prep.get("tau_scale", 0.5),
        evolve_tol=prep.get("evolve_tol", 1e-8),
        equil_tol=prep.get("equil_tol", 1e-10),
        max_sweeps=prep.get("max_sweeps", 1000),
        refine_taus=prep.get("refine_taus", 0),
        initial=initial,
        history=history,
    )
    out = Path(args.out)
    save_state(state, out)
    seed = args.seed if args.seed is not None else prep.get("seed", 0)
    _write_json(
        out.with_suffix(out.suffix + ".meta.json"),
        {
            "config_hash": config_hash(cfg),
            "version": __version__,
            "seed": seed,
            "schedule": history,
            "seconds": time.perf_counter() - t0,
            "max_bond_dim": state.max_bond_dim,
        },
    )
    print(f"prepared state -> {out} (D={state.max_bond_dim})")
    return 0


def _estimate_rows(cfg: dict, state, oracle_mode: str):
    model = build_model(cfg)
    est = cfg.get("estimate", {})
    bp_cfg = cfg.get("bp", {})
    c_max = est.get("c_max", 6)
    formula = est.get("formula", "product")
    formulas = ("product", "sum") if formula == "both" else (formula,)
    observables = est.get("observables", ["energy"])
    prepared = prepare_network(
        state,
        bp_tol=bp_cfg.get("tol", 1e-12),
        bp_max_iters=bp_cfg.get("max_iters", 500),
        damping=bp_cfg.get("damping", 0.0),
    )
    chash = config_hash(cfg)
    rows = []
    timings = []
    bp_flags = ";".join(prepared.msgs.flags)
    for spec in observables:
        name, op, sites = parse_observable(spec, model)
        t0 = time.perf_counter()
        if name == "energy":
            series = energy_series(prepared, model, c_max)
            oracle_val = None
            if oracle_mode != "off":
                try:
                    oracle_val = model_energy(state, model) / model.graph.n_sites
                except OracleError:
                    if oracle_mode == "on":
                        raise
            for idx, c in enumerate(series.cs):
                for f in formulas:
                    rows.append(
                        [
                            name,
                            c,
                            f,
                            _fmt(series.values(f)[idx]),
                            series.region_counts[idx],
                            "" if oracle_val is None else _fmt(oracle_val),
                            bp_flags,
                            chash,
                            __version__,
                        ]
                    )
        else:
            series = expansion_series(
                prepared.doubled,
                prepared.msgs,
                op,
                sites,
                c_max,
                evaluator=prepared.evaluator,
                observable=name,
            )
            oracle_val = None
            if oracle_mode != "off":
                try:
                    oracle_val = exact_expectation(state, op, sites).real
                except OracleError:
                    if oracle_mode == "on":
                        raise
            for est_c in series:
                for f in formulas:
                    rows.append(
                        [
                            name,
                            est_c.c_max,
                            f,
                            _fmt(est_c.value(f).real),
                            est_c.n_regions,
                            "" if oracle_val is None else _fmt(oracle_val),
                            ";".join(est_c.flags),
                            chash,
                            __version__,
                        ]
                    )
        timings.append({"observable": name, "seconds": time.perf_counter() - t0})
    meta = {
        "config_hash": chash,
        "version": __version__,
        "bp": {
            "iterations": prepared.msgs.iterations,
            "residual": prepared.msgs.residual,
            "converged": prepared.msgs.converged,
            "damping_used": prepared.msgs.damping_used,
            "flags": prepared.msgs.flags,
        },
        "timings": timings,
    }
    return rows, meta


ESTIMATE_HEADER = [
    "observable",
    "C",
    "formula",
    "value",
    "regions",
    "oracle",
    "flags",
    "config_hash",
    "version",
]


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    state = load_state(args.state)
    rows, meta = _estimate_rows(cfg, state, args.oracle)
    out = Path(args.out)
    _write_csv(out, ESTIMATE_HEADER, rows)
    _write_json(out.with_suffix(out.suffix + ".meta.json"), meta)
    print(f"estimates -> {out} ({len(rows)} rows)")
    return 0


def cmd_extrapolate(args) -> int:
    formula = args.formula
    observable = args.observable
    with open(args.results) as f:
        rows = list(csv.DictReader(f))
    points: dict[int, float] = {}
    for row in rows:
        if row["observable"] != observable or row["formula"] != formula:
            continue
        points[int(row["C"])] = float(row["value"])
    if len(points) < 3:
        raise ConfigError(
            f"need >= 3 cluster sizes for {observable!r}/{formula!r};"
            f" found {len(points)}"
        )
    cs = sorted(points)
    seq = [points[c] for c in cs]
    res = extrapolate(seq, cs=cs)
    payload = {
        "observable": observable,
        "formula": formula,
        "value": res.value,
        "error": res.error,
        "k_used": res.k_used,
        "c_max": res.c_max,
        "flags": res.flags,
        "sequence": {str(c): v for c, v in zip(cs, seq)},
        # divergent (regularized) entries serialize as null, not the
        # non-standard Infinity token
        "epsilon_table": {
            str(k): [v if math.isfinite(v) else None for v in res.table.column(k)]
            for k in range(res.table.max_k + 1)
        },
        "version": __version__,
    }
    _write_json(args.out, payload)
    print(
        f"extrapolated {observable} ({formula}): {res.value:.10f}"
        f" +/- {res.error:.2e} -> {args.out}"
    )
    return 0


BENCH_HEADER = [
    "model",
    "D",
    "C",
    "formula",
    "value",
    "regions",
    "error",
    "config_hash",
    "version",
]


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    bench = cfg.get("bench", {})
    d_values = bench.get("d_values", [2])
    c_max = bench.get("c_max", cfg.get("estimate", {}).get("c_max", 6))
    formula = cfg.get("estimate", {}).get("formula", "product")
    formulas = ("product", "sum") if formula == "both" else (formula,)
    chash = config_hash(cfg)
    model = build_model(cfg)

    def one_cell(d: int):
        t0 = time.perf_counter()
        prep_cfg = cfg.get("prepare", {})
        state = su_ground_state(
            model,
            d_target=d,
            tau_scale=prep_cfg.get("tau_scale", 0.5),
            evolve_tol=prep_cfg.get("evolve_tol", 1e-8),
            equil_tol=prep_cfg.get("equil_tol", 1e-10),
            max_sweeps=prep_cfg.get("max_sweeps", 1000),
        )
        prepared = prepare_network(state)
        series = energy_series(prepared, model, c_max)
        oracle_val = None
        if args.oracle != "off":
            try:
                oracle_val = model_energy(state, model) / model.graph.n_sites
            except OracleError:
                if args.oracle == "on":
                    raise
        cell_rows = []
        for idx, c in enumerate(series.cs):
            for f in formulas:
                val = series.values(f)[idx]
                err = "" if oracle_val is None else _fmt(abs(val - oracle_val))
                cell_rows.append(
                    [
                        model.name,
                        d,
                        c,
                        f,
                        _fmt(val),
                        series.region_counts[idx],
                        err,
                        chash,
                        __version__,
                    ]
                )
        return d, cell_rows, time.perf_counter() - t0

    results = {}
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            for d, cell_rows, secs in pool.map(one_cell, d_values):
                results[d] = (cell_rows, secs)
    else:
        for d in d_values:
            d, cell_rows, secs = one_cell(d)
            results[d] = (cell_rows, secs)
    rows = []
    timing = []
    for d in sorted(results):
        cell_rows, secs = results[d]
        rows.extend(cell_rows)
        timing.append({"D": d, "seconds": secs})
    out = Path(args.out)
    _write_csv(out, BENCH_HEADER, rows)
    _write_json(
        out.with_suffix(out.suffix + ".meta.json"),
        {"config_hash": chash, "version": __version__, "timings": timing},
    )
    print(f"bench grid -> {out} ({len(rows)} rows)")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tnlce",
        description="Loop cluster expansion experiments on tensor-network states",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="run the simple-update schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output state file (.npz)")
    p.add_argument(
        "--resume",
        default=None,
        help="existing lower-D state file to continue the ramp from",
    )
    p.add_argument(
        "--seed",
        type=int,
        default=None,
        help="override the config seed recorded in the run metadata",
    )
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("estimate", help="loop-cluster estimates over C")
    p.add_argument("--config", required=True)
    p.add_argument("--state", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument(
        "--oracle",
        choices=("auto", "on", "off"),
        default="auto",
        help="exact reference column: auto skips when intractable",
    )
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("extrapolate", help="Wynn-extrapolate a results table")
    p.add_argument("--results", required=True, help="CSV from estimate/bench")
    p.add_argument("--out", required=True, help="output JSON")
    p.add_argument("--formula", default="product")
    p.add_argument("--observable", default="energy")
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("bench", help="sweep (D, C) and emit a scaling grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--oracle", choices=("auto", "on", "off"), default="auto")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
