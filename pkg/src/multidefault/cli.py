"""Command line: ``multidefault {price,simulate,optimize,validate} --config FILE``.

Every output file carries the schema version, tool version, config hash and
seed. Outputs never record timestamps or the thread count, so re-runs with the
same config and seed are byte-identical.

Exit codes: 0 success, 2 configuration, 3 numerical, 4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, custom_payoff, fixture_path, load_config
from .contagion import simulate_wealth
from .errors import ConfigurationError, MultiDefaultError, VerificationError
from .oracle import estimate_price
from .pricing import (
    PriceReport,
    first_to_default_survival,
    kth_survival_payoff,
    kth_to_default_survival,
    loss_call,
    loss_payoff,
    price_general,
    tranche_price,
)
from .scenarios import NameSet

SCHEMA_VERSION = 1
COMMANDS = ("price", "simulate", "optimize", "validate")


def provenance(cfg: RunConfig, command: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "multidefault",
        "version": __version__,
        "command": command,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
    }


def _dump_json(path: Path, obj: dict) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")
    return path


def _dump_csv(path: Path, cfg: RunConfig, command: str, header: list[str], rows) -> Path:
    buf = io.StringIO()
    prov = provenance(cfg, command)
    buf.write("# " + " ".join(f"{k}={prov[k]}" for k in sorted(prov)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    path.write_text(buf.getvalue())
    return path


def price_product(cfg: RunConfig, product) -> tuple[PriceReport, object]:
    """Price one configured product; returns the report and the payoff used for Monte Carlo."""
    m, st, fs, T, nodes = cfg.model, cfg.state, cfg.filtration, product.T, cfg.numerics["quad_nodes"]
    p = product.params
    if product.kind == "first":
        return first_to_default_survival(m, st, fs, T, nodes), kth_survival_payoff(m.n, 1, T)
    if product.kind == "kth":
        return kth_to_default_survival(m, p["k"], st, fs, T, nodes), kth_survival_payoff(m.n, p["k"], T)
    if product.kind == "loss_call":
        return loss_call(m, p["a"], p["R"], st, fs, T, nodes), loss_payoff(m.n, T, p["R"], p["a"])
    if product.kind == "tranche":
        return tranche_price(m, p["a"], p["b"], p["R"], st, fs, T, nodes), loss_payoff(m.n, T, p["R"], p["a"], p["b"])
    payoff = custom_payoff(product, m.n)
    return price_general(m, payoff, st, fs, nodes, product.describe()), payoff


def run_price(cfg: RunConfig, threads: int, out: Path) -> list[Path]:
    cfg.require("model")
    if not cfg.products:
        raise ConfigurationError("price needs a non-empty 'products' list")
    records = []
    mc_paths = cfg.numerics["mc_paths"]
    for i, product in enumerate(cfg.products):
        rep, payoff = price_product(cfg, product)
        rec = {"product": product.describe(), **rep.to_dict()}
        if mc_paths:
            if len(cfg.state.I) or cfg.model.factor is not None and cfg.state.t >= cfg.model.factor.reveal_time:
                rec["monte_carlo"] = None
            else:
                bins = estimate_price(cfg.model, payoff, cfg.state.t, mc_paths, cfg.seed, 1, threads)
                est = next(b for b in bins if len(b.J) == 0).estimate
                rec["monte_carlo"] = {**est.to_dict(), "within_3_stderr": est.agrees(rep.value, 3.0, rep.error_bound)}
        records.append(rec)
    files = [_dump_json(out / "prices.json", {**provenance(cfg, "price"), "records": records})]
    rows = []
    for r in records:
        mc = r.get("monte_carlo")
        rows.append(
            [r["product"], r["scenario"]["t"], NameSet.of(cfg.model.n, [k - 1 for k in r["scenario"]["defaulted"]]).label(),
             r["value"], r["error_bound"], "" if not mc else mc["mean"], "" if not mc else mc["stderr"]]
        )
    files.append(
        _dump_csv(out / "prices.csv", cfg, "price", ["product", "t", "scenario", "value", "error_bound", "mc_mean", "mc_stderr"], rows)
    )
    width = max(len(r[0]) for r in rows)
    print(f"{'product':<{width}}  {'value':>12}  {'error bound':>11}")
    for r in rows:
        print(f"{r[0]:<{width}}  {r[3]:>12.6f}  {r[4]:>11.1e}")
    return files


def _optimize(cfg: RunConfig, threads: int):
    from .optimizer import solve

    cfg.require("model", "assets")
    return solve(cfg.model, cfg.assets, cfg.utility, cfg.opt_x0, cfg.opt_T, cfg.optimizer, threads)


def run_simulate(cfg: RunConfig, threads: int, out: Path) -> list[Path]:
    from .config import build_strategy

    cfg.require("model", "assets")
    sim = cfg.sim
    T = float(sim["T"])
    strategy = build_strategy(sim["strategy"], cfg.assets, T)
    if strategy == "optimal":
        if abs(cfg.opt_T - T) > 0:
            raise ConfigurationError("simulation.T must equal optimizer.T for the optimal strategy")
        strategy = _optimize(cfg, threads).strategy
    paths = simulate_wealth(cfg.assets, strategy, float(sim["x0"]), cfg.model, cfg.seed, float(sim["dt"]), T, int(sim["paths"]), cfg.s0)
    N, n = cfg.assets.N, cfg.model.n
    rows = []
    for p, path in enumerate(paths):
        for j, t in enumerate(path.times):
            rows.append([p, t, int(path.masks[j]), NameSet(int(path.masks[j]), n).label(), *path.assets[j], path.wealth[j]])
    header = ["path", "time", "scenario_mask", "scenario", *[f"S{i + 1}" for i in range(N)], "wealth"]
    files = [_dump_csv(out / "paths.csv", cfg, "simulate", header, rows)]
    summary = [
        {
            "path": p,
            "default_times": [None if not np.isfinite(x) else float(x) for x in path.default_times],
            "factor": path.factor,
            "terminal_wealth": float(path.wealth[-1]),
            "jumps": [{"time": float(t), "name": int(k) + 1, "from": NameSet(int(m), n).label(), "wealth_factor": float(f)} for t, k, m, f in path.jumps],
        }
        for p, path in enumerate(paths)
    ]
    files.append(_dump_json(out / "simulate.json", {**provenance(cfg, "simulate"), "paths": summary}))
    return files


def run_optimize(cfg: RunConfig, threads: int, out: Path) -> list[Path]:
    from .optimizer import verify_global

    report = _optimize(cfg, threads)
    if cfg.verify is not None:
        v = cfg.verify
        record = verify_global(report, cfg.model, cfg.assets, v.paths, cfg.seed, v.families, v.family_paths, threads, exact_shares=v.exact_shares)
        report = report.with_verification(record)
    files = [_dump_json(out / "optimize.json", {**provenance(cfg, "optimize"), "report": report.to_dict()})]
    rows = []
    for b, tab in sorted(report.table.tables.items()):
        for j, a in enumerate(tab.nodes):
            for k in range(tab.pi.shape[1]):
                rows.append([tab.I.label(), j, a, tab.coef[j], k, *tab.pi[j, k]])
    header = ["scenario", "node", "a", "coefficient", "interval", *[f"pi{i + 1}" for i in range(cfg.assets.N)]]
    files.append(_dump_csv(out / "values.csv", cfg, "optimize", header, rows))
    print(f"V_empty(x0={cfg.opt_x0}) = {report.value:.10g}")
    if report.verification is not None:
        print("verification:", "passed" if report.verification["passed"] else "FAILED")
        if not report.verification["passed"]:
            raise VerificationError("global verification of the optimizer failed; see optimize.json")
    return files


def run_validate(cfg: RunConfig, threads: int, out: Path) -> list[Path]:
    from .validation import run_all

    results = run_all(cfg.seed, threads, cfg.validate["scale"], cfg.validate["criteria"], log=print)
    lines = [r.line() for r in results]
    files = [
        _dump_json(out / "validate.json", {**provenance(cfg, "validate"), "scale": cfg.validate["scale"], "criteria": [r.to_dict() for r in results]}),
    ]
    (out / "validate.txt").write_text("\n".join(lines) + "\n")
    files.append(out / "validate.txt")
    for line in lines:
        print(line)
    if not all(r.passed for r in results):
        raise VerificationError("acceptance criteria failed: " + ", ".join(str(r.number) for r in results if not r.passed))
    return files


RUNNERS = {"price": run_price, "simulate": run_simulate, "optimize": run_optimize, "validate": run_validate}


def run(command: str, cfg: RunConfig, threads: int = 1, out_dir=None) -> list[Path]:
    """Execute one subcommand and return the files written."""
    if command not in RUNNERS:
        raise ConfigurationError(f"unknown command {command!r}")
    if threads < 1:
        raise ConfigurationError("--threads must be at least 1")
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return RUNNERS[command](cfg, threads, out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multidefault", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"multidefault {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (validate defaults to the shipped fixture)", required=name != "validate")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
        p.add_argument("--out", help="output directory (default: output.dir of the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config if args.config else fixture_path("validate.json"))
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigurationError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
        run(args.command, cfg, args.threads, args.out)
    except MultiDefaultError as e:
        print(f"multidefault {args.command}: error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
