"""Command-line front end: ``ratio-consensus {consensus,coordination,oracle}``.

Exit codes: 0 success, 1 usage or configuration error, 2 not converged,
3 infeasible demand, 4 oracle check failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import graph as graphs
from .coordination import ResourceParams, average_estimate, resource_allocation
from .errors import InfeasibleDemand, InfeasibleDemandWarning, NotConverged, RatioConsensusError
from .oracle import run_oracle_checks
from .protocol import init_average_consensus, init_resource_coordination
from .rng import spawn_rngs
from .simulator import DropModel, _fmt, run, threshold_C

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED, EXIT_INFEASIBLE, EXIT_ORACLE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="file of 'key = value' lines; flags override it")
    p.add_argument("--graph", help="paper5, cycle:N, cycle-chord:N, complete:N, random, or an edge-list file")
    p.add_argument("--n", type=int, help="vertex count for --graph random")
    p.add_argument("--p", type=float, help="edge probability for --graph random")
    p.add_argument("--q", help="delivery probability, or a file of 'j i q' lines")
    p.add_argument("--self-drop", choices=["on", "off"], help="whether self-loops can drop (default on)")
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


DEFAULTS = {
    "graph": "paper5", "n": 50, "p": 0.5, "q": "1.0", "self_drop": "on", "rounds": None,
    "seed": 0, "out": ".", "tol": 1e-6, "window": 50, "trials": 10_000, "threshold": "0",
    "values": None, "pi_min": None, "pi_max": None, "rho": None, "leaders": "1",
    "dump_masks": False, "mc_rounds": 15,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ratio-consensus", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("consensus", help="simulate average consensus over lossy links")
    _common(c)
    c.add_argument("--values", help="initial values, comma separated (use --values=-4,5,...); random if omitted")
    c.add_argument("--tol", type=float)
    c.add_argument("--window", type=int)
    c.add_argument("--threshold", help="ratio reported only when z exceeds this; 'C' for the positivity constant")
    c.add_argument("--dump-masks", action="store_true", default=None)

    r = sub.add_parser("coordination", help="distributed resource allocation under capacity limits")
    _common(r)
    r.add_argument("--pi-min", required=False)
    r.add_argument("--pi-max", required=False)
    r.add_argument("--rho", type=float)
    r.add_argument("--leaders", help="1-based nodes contacted by the leader, comma separated")
    r.add_argument("--tol", type=float)
    r.add_argument("--window", type=int)
    r.add_argument("--dump-masks", action="store_true", default=None)

    o = sub.add_parser("oracle", help="analytic moment checks with Monte Carlo cross-validation")
    _common(o)
    o.add_argument("--values", help="initial y values (default 1..n)")
    o.add_argument("--trials", type=int, help="Monte Carlo replicas (0 disables)")
    o.add_argument("--mc-rounds", type=int)
    return parser


def read_config(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def resolve(args: argparse.Namespace, command: str = "consensus") -> argparse.Namespace:
    """Merge defaults < config file < flags, converting config strings to flag types."""
    merged = dict(DEFAULTS)
    if args.config:
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        merged.update(read_config(args.config))
    for key, value in vars(args).items():
        if value is not None:
            merged[key] = value
    if merged["rounds"] is None:
        merged["rounds"] = 200 if command == "oracle" else 500
    for key in ("n", "rounds", "seed", "window", "trials", "mc_rounds"):
        merged[key] = int(merged[key])
    for key in ("p", "tol"):
        merged[key] = float(merged[key])
    if merged["rho"] is not None:
        merged["rho"] = float(merged["rho"])
    if isinstance(merged["dump_masks"], str):
        merged["dump_masks"] = merged["dump_masks"].lower() in ("1", "true", "on", "yes")
    if merged["self_drop"] not in ("on", "off"):
        raise UsageError("self_drop must be 'on' or 'off'")
    if merged["rounds"] < 1:
        raise UsageError("rounds must be >= 1")
    return argparse.Namespace(**merged)


def load_graph(cfg) -> graphs.DirectedGraph:
    spec = str(cfg.graph)
    if spec == "random":
        return graphs.random_strongly_connected(cfg.n, cfg.p, cfg.seed)
    if os.path.isfile(spec):
        return graphs.read_edge_list(spec)
    try:
        return graphs.builtin_graph(spec)
    except ValueError as exc:
        raise UsageError(f"unknown graph {spec!r}: not a builtin and no such file") from exc


def load_model(cfg, g) -> DropModel:
    self_drop = cfg.self_drop == "on"
    text = str(cfg.q)
    try:
        return DropModel(q=float(text), self_drop=self_drop)
    except ValueError:
        pass
    if not os.path.isfile(text):
        raise UsageError(f"--q must be a probability or a per-edge file, got {text!r}")
    per_edge = {}
    with open(text) as fh:
        for line in fh:
            parts = line.split("#", 1)[0].split()
            if parts:
                j, i, q = int(parts[0]), int(parts[1]), float(parts[2])
                per_edge[(j, i)] = q
    model = DropModel(q=1.0, per_edge=per_edge, self_drop=self_drop)
    model.edge_probabilities(g)  # rejects non-edges
    return model


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_ratios(trace, path: Path) -> None:
    ratios, defined = trace.ratios, trace.defined
    with open(path, "w") as fh:
        fh.write("round," + ",".join(f"node{j + 1}" for j in range(trace.n)) + "\n")
        for k in range(ratios.shape[0]):
            cells = [_fmt(ratios[k, j]) if defined[k, j] else "" for j in range(trace.n)]
            fh.write(f"{k}," + ",".join(cells) + "\n")


def cmd_consensus(cfg) -> int:
    g = load_graph(cfg)
    model = load_model(cfg, g)
    value_rng, sim_rng = spawn_rngs(cfg.seed, 2)
    if cfg.values is not None:
        values = _floats(cfg.values) if isinstance(cfg.values, str) else list(cfg.values)
        if len(values) != g.n:
            raise UsageError(f"--values has {len(values)} entries for {g.n} nodes")
    else:
        values = value_rng.uniform(-10.0, 10.0, g.n).tolist()
    threshold = threshold_C(g) if str(cfg.threshold).upper() == "C" else float(cfg.threshold)
    trace = run(init_average_consensus(values), g, model, sim_rng, cfg.rounds, threshold=threshold)
    out = _out_dir(cfg)
    trace.to_csv(out / "trace.csv")
    _write_ratios(trace, out / "ratios.csv")
    if cfg.dump_masks:
        trace.masks_to_csv(out / "masks.csv")
    target = float(np.mean(values))
    print(f"target average {_fmt(target)}")
    try:
        report = average_estimate(trace, window=cfg.window, tol=cfg.tol)
    except NotConverged as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    report.to_csv(out / "report.csv")
    print(f"converged to {_fmt(report.value)} at round {report.first_converged_round}")
    return EXIT_OK


def cmd_coordination(cfg) -> int:
    if cfg.pi_min is None or cfg.pi_max is None or cfg.rho is None:
        raise UsageError("coordination needs --pi-min, --pi-max and --rho")
    params = ResourceParams(_floats(str(cfg.pi_min)), _floats(str(cfg.pi_max)), cfg.rho, _ints(str(cfg.leaders)))
    g = load_graph(cfg)
    if g.n != params.n:
        raise UsageError(f"capacity vectors have {params.n} entries for {g.n} nodes")
    model = load_model(cfg, g)
    (sim_rng,) = spawn_rngs(cfg.seed, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InfeasibleDemandWarning)
        states = init_resource_coordination(params.pi_min, params.pi_max, params.rho_d, params.leader_set)
    trace = run(states, g, model, sim_rng, cfg.rounds)
    out = _out_dir(cfg)
    trace.to_csv(out / "trace.csv")
    if cfg.dump_masks:
        trace.masks_to_csv(out / "masks.csv")
    try:
        alloc = resource_allocation(trace, params, window=cfg.window, tol=cfg.tol)
    except InfeasibleDemand as exc:
        print(f"infeasible: rho_d={exc.rho_d} sum_min={exc.sum_min} sum_max={exc.sum_max}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NotConverged as exc:
        if not params.feasible:
            print(f"infeasible: rho_d={params.rho_d} sum_min={params.sum_min} sum_max={params.sum_max}", file=sys.stderr)
            return EXIT_INFEASIBLE
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    alloc.to_csv(out / "allocation.csv")
    if alloc.convergence is not None:
        alloc.convergence.to_csv(out / "report.csv")
    ok = alloc.sum_error <= params.n * cfg.tol and alloc.box_violation <= cfg.tol
    print(f"allocation {' '.join(_fmt(p) for p in alloc.pi)} feasible={'yes' if ok else 'no'}")
    return EXIT_OK


def cmd_oracle(cfg) -> int:
    g = load_graph(cfg)
    model = load_model(cfg, g)
    if not model.uniform:
        raise UsageError("the oracle covers uniform q only")
    if not model.self_drop:
        raise UsageError("the oracle models self-drop mode; use --self-drop on")
    y0 = _floats(cfg.values) if cfg.values else list(range(1, g.n + 1))
    if len(y0) != g.n:
        raise UsageError(f"--values has {len(y0)} entries for {g.n} nodes")
    rep = run_oracle_checks(
        g, model.q, y0, k_max=cfg.rounds,
        trials=cfg.trials, mc_rounds=cfg.mc_rounds, seed=cfg.seed,
    )
    out = _out_dir(cfg)
    rep.to_csv(out / "oracle.csv")
    rep.spectral_to_csv(out / "spectral.csv")
    for c in rep.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} {_fmt(c.value)} {c.detail}".rstrip())
    return EXIT_OK if rep.passed else EXIT_ORACLE


COMMANDS = {"consensus": cmd_consensus, "coordination": cmd_coordination, "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    del args.command
    try:
        cfg = resolve(args, command)
        return COMMANDS[command](cfg)
    except (UsageError, ValueError, OSError, RatioConsensusError) as exc:
        print(f"ratio-consensus: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
