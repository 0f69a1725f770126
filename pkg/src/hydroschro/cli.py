"""Command-line interface.

    hydroschro bridge   --config run.json --out DIR [--oracle colehopf] [--seed N]
    hydroschro current  --config run.json --out DIR
    hydroschro simulate --config run.json --out DIR [--replicas N] [--seed N]
    hydroschro verify   [--config suite.json] [--refine K]
    hydroschro transform --config run.json --out DIR
    hydroschro rate     --config run.json

Exit codes: 0 success, 1 configuration error, 2 solver non-convergence,
3 verification failure.
"""

from __future__ import annotations

import argparse
import ast
import json
import logging
import math
import operator
import sys
import time
from pathlib import Path

import numpy as np

from . import runlog

EXIT_OK, EXIT_CONFIG, EXIT_NONCONV, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("hydroschro")


class ConfigError(ValueError):
    pass


# -- expressions ------------------------------------------------------------------

_FUNCS = {"cos": np.cos, "sin": np.sin, "exp": np.exp}
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv}


def eval_expression(expr: str, x: np.ndarray, length: float = 1.0) -> np.ndarray:
    """Evaluate a closed-form profile at the points ``x``.

    Grammar: numbers, ``x``, ``pi``, ``L``, ``cos``/``sin``/``exp`` calls,
    ``+ - * /`` and unary minus.
    """
    try:
        tree = ast.parse(str(expr), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {expr!r}: {exc.msg}") from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id == "x":
                return x
            if node.id == "pi":
                return math.pi
            if node.id == "L":
                return float(length)
            raise ConfigError(f"unknown name {node.id!r} in expression")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ConfigError(f"unsupported construct in expression {expr!r}")

    out = ev(tree)
    return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x)).copy()


# -- config helpers ------------------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None


def _model(spec):
    from .models import ModelError, builtin, load_json

    if spec is None:
        raise ConfigError("missing 'model'")
    if isinstance(spec, str):
        spec = {"name": spec}
    try:
        if "file" in spec:
            return load_json(spec["file"])
        name = spec["name"]
        if name == "zero_range":
            return builtin(name, power=(float(spec.get("c", 1.0)), float(spec.get("power", 1.0))))
        if name == "custom":
            return builtin(name, doc=spec)
        if name == "ssep" and "D_s_table" in spec:
            return builtin(name, D_s_table=spec["D_s_table"])
        return builtin(name)
    except (ModelError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad model spec: {exc}") from None


def _is_independent(model) -> bool:
    r = np.linspace(0.1, 5.0, 50)
    return bool(np.allclose(model.D_h(r), 1.0) and np.allclose(model.sigma(r), r))


def _grid(spec):
    from .fields import Grid, GridError

    spec = spec or {}
    try:
        return Grid(int(spec.get("n_cells", 64)), float(spec.get("length", 1.0)))
    except GridError as exc:
        raise ConfigError(str(exc)) from None


def _profile(spec, grid, what):
    if spec is None:
        raise ConfigError(f"missing {what!r}")
    if isinstance(spec, (int, float)):
        return np.full(grid.n_cells, float(spec))
    if isinstance(spec, str):
        return eval_expression(spec, grid.centers, grid.length)
    if isinstance(spec, dict) and "csv" in spec:
        data = np.loadtxt(spec["csv"], delimiter=",", ndmin=1)
        if data.shape != (grid.n_cells,):
            raise ConfigError(f"{what} CSV has {data.size} values, grid has {grid.n_cells}")
        return data
    if isinstance(spec, list):
        arr = np.asarray(spec, dtype=float)
        if arr.shape != (grid.n_cells,):
            raise ConfigError(f"{what} has {arr.size} values, grid has {grid.n_cells}")
        return arr
    raise ConfigError(f"cannot interpret {what!r}")


def _out_dir(args, cfg):
    out = Path(args.out or cfg.get("out", "hydroschro_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out, cfg):
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))


def _log(out, op, cfg, metrics, flags, t0):
    runlog.append_record(out / "runlog.jsonl", op, cfg, metrics, flags, time.perf_counter() - t0)


# -- commands ---------------------------------------------------------------------

def cmd_bridge(args, cfg) -> int:
    from .bridge import BridgeError, BridgeProblem, save_solution, solve_hsp, solve_hsp_multistart
    from .colehopf import solve_independent_bridge

    t0 = time.perf_counter()
    model = _model(cfg.get("model"))
    grid = _grid(cfg.get("grid"))
    T = float(cfg.get("T", 0.1))
    n_steps = int(cfg.get("n_steps", 100))
    mu0 = _profile(cfg.get("mu0"), grid, "mu0")
    mu1 = _profile(cfg.get("mu1"), grid, "mu1")
    solver = cfg.get("solver", {})
    seed = args.seed if args.seed is not None else cfg.get("seed")
    try:
        problem = BridgeProblem(model, grid, T, n_steps, mu0, mu1, seed=seed, **solver)
    except (BridgeError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, cfg)
    eff = dict(cfg, seed=seed)
    _write_config(out, eff)
    starts = int(cfg.get("multistart", 1))
    if starts > 1:
        sols = solve_hsp_multistart(problem, range(seed or 0, (seed or 0) + starts))
        sol = sols[0]
        for i, s in enumerate(sols[1:], 1):
            save_solution(s, out / f"start_{i}", eff)
    else:
        sol = solve_hsp(problem)
    save_solution(sol, out, eff)
    metrics = {"value": sol.value, "endpoint_error": sol.diagnostics["endpoint_error"],
               "iterations": sol.diagnostics["iterations"]}
    oracle = args.oracle or cfg.get("oracle")
    if oracle:
        if oracle != "colehopf" or not _is_independent(model):
            print("oracle 'colehopf' applies to independent particles only", file=sys.stderr)
            return EXIT_CONFIG
        ref = solve_independent_bridge(mu0, mu1, grid, T, n_steps)
        report = {"value": sol.value, "oracle_value": ref.value,
                  "relative_value_gap": abs(sol.value - ref.value) / max(abs(ref.value), 1e-300),
                  "rho_sup_gap": float(np.max(np.abs(sol.rho_star.values
                                                     - ref.rho_star.values)))}
        (out / "oracle.json").write_text(json.dumps(report, indent=2))
        metrics.update(report)
    flags = [] if sol.converged else ["not_converged"]
    _log(out, "bridge", eff, metrics, flags, t0)
    print(json.dumps(metrics))
    return EXIT_OK if sol.converged else EXIT_NONCONV


def cmd_current(args, cfg) -> int:
    from .currents import CurrentError, CurrentProblem, solve_hspc, solve_hspdc, write_sweep_csv

    t0 = time.perf_counter()
    model = _model(cfg.get("model"))
    grid = _grid(cfg.get("grid"))
    J_vals = cfg.get("J_bar", 0.0)
    J_vals = J_vals if isinstance(J_vals, list) else [J_vals]
    T_vals = cfg.get("T", 1.0)
    T_vals = T_vals if isinstance(T_vals, list) else [T_vals]
    steps_per_unit = int(cfg.get("steps_per_unit", 32))
    extra = {k: cfg[k] for k in ("m", "initial", "n_starts", "tol", "max_outer") if k in cfg}
    if args.seed is not None:
        extra["seed"] = args.seed
    mu0 = _profile(cfg["mu0"], grid, "mu0") if "mu0" in cfg else None
    mu1 = _profile(cfg["mu1"], grid, "mu1") if "mu1" in cfg else None
    out = _out_dir(args, cfg)
    _write_config(out, cfg)
    rows, flags = [], []
    for T in T_vals:
        for J in J_vals:
            try:
                prob = CurrentProblem(model, grid, float(T), max(8, int(round(steps_per_unit * T))),
                                      float(J), mu0=mu0, mu1=mu1, **extra)
            except (CurrentError, TypeError) as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            sol = solve_hspdc(prob) if mu1 is not None else solve_hspc(prob)
            rows.append((J, T, sol.value_per_time, sol.u_bound, sol.gap, sol.time_dependent))
            if not sol.converged:
                flags.append(f"not_converged:J={J},T={T}")
    write_sweep_csv(out / "sweep.csv", rows)
    metrics = {"rows": [list(map(float, r[:5])) + [bool(r[5])] for r in rows]}
    _log(out, "current", cfg, metrics, flags, t0)
    print(json.dumps(metrics))
    return EXIT_NONCONV if flags else EXIT_OK


def cmd_simulate(args, cfg) -> int:
    from . import micro
    from .fields import write_csv

    t0 = time.perf_counter()
    mode = cfg.get("mode", "single")
    kind = cfg.get("model_kind", "independent_rw")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    replicas = args.replicas if args.replicas is not None else int(cfg.get("replicas", 1))
    T = float(cfg.get("T", 0.05))
    expr = cfg.get("rho0", 1.0)
    rho0 = (lambda x: eval_expression(expr, x)) if isinstance(expr, str) else float(expr)
    g_power = cfg.get("g_power")
    g = (lambda k: k ** float(g_power)) if g_power is not None else None
    out = _out_dir(args, cfg)
    eff = dict(cfg, seed=seed, replicas=replicas)
    _write_config(out, eff)
    try:
        if mode == "single":
            recs = micro.run_replicas(replicas, seed, model_kind=kind, ell=int(cfg.get("ell", 16)),
                                      rho0=rho0, t_final=T, g=g,
                                      n_snapshots=int(cfg.get("n_snapshots", 11)))
            write_csv(out / "snapshots.csv", recs[0].snapshots_field())
            metrics = {"continuity_defect": max(r.continuity_defect() for r in recs),
                       "particles": [r.n_particles for r in recs],
                       "jumps": [r.jumps for r in recs]}
        elif mode == "lln":
            from .models import independent

            if g is not None or kind not in ("zero_range", "independent_rw"):
                raise ConfigError("the LLN reference is the heat equation: g(k) = k only")

            rows = micro.lln_sweep(cfg.get("ells", [32, 64, 128]),
                                   rho0 if callable(rho0) else (lambda x: np.full_like(x, rho0)),
                                   T, replicas, seed, independent(), g=g,
                                   n_bins=int(cfg.get("n_bins", 16)), kind=kind)
            errs = [r["l1_per_replica"] for r in rows]
            metrics = {"rows": rows, "monotone": bool(np.all(np.diff(errs) < 0))}
            with (out / "lln.csv").open("w") as fh:
                fh.write("ell,l1_mean_density,l1_per_replica,l1_per_replica_se\n")
                for r in rows:
                    fh.write(f"{r['ell']},{r['l1_mean_density']!r},{r['l1_per_replica']!r},"
                             f"{r['l1_per_replica_se']!r}\n")
        elif mode == "driven":
            from .bridge import BridgeProblem, solve_hsp

            b = cfg.get("bridge", {})
            model = _model(b.get("model", "independent"))
            grid = _grid(b.get("grid"))
            sol = solve_hsp(BridgeProblem(model, grid, float(b.get("T", 0.1)),
                                          int(b.get("n_steps", 100)),
                                          _profile(b.get("mu0"), grid, "mu0"),
                                          _profile(b.get("mu1"), grid, "mu1")))
            rep = micro.driven_bridge_experiment(kind, int(cfg.get("ell", 128)), sol, replicas,
                                                 seed, n_bins=int(cfg.get("n_bins", 8)))
            metrics = rep["metrics"]
        elif mode == "tagged":
            est = micro.tagged_diffusion(kind, int(cfg.get("ell", 128)), float(cfg.get("m", 1.0)),
                                         float(cfg.get("T_msd", 50.0)), replicas, seed, g=g,
                                         t_min=cfg.get("t_min"))
            metrics = {"D_s": est.estimate, "ci": list(est.ci), "exponent": est.exponent,
                       "exponent_ci": list(est.exponent_ci), "subdiffusive": est.subdiffusive,
                       "insufficient_statistics": est.insufficient}
        else:
            raise ConfigError(f"unknown simulate mode {mode!r}")
    except micro.MicroError as exc:
        raise ConfigError(str(exc)) from None
    report = {"model": kind, "mode": mode, "T": T, "replicas": replicas, "seed": seed,
              "metrics": metrics}
    micro.write_report(out / "report.json", report)
    _log(out, "simulate", eff, metrics, [], t0)
    print(json.dumps(report, default=str))
    return EXIT_OK


def verification_suite(refine: int = 0, fault: str | None = None):
    """Rows ``(name, value, threshold, passed)`` of the invariant checks."""
    from dataclasses import replace

    from .bridge import (BridgeProblem, born_density, canonical_residual, reverse_bridge,
                         solve_hsp)
    from .colehopf import akns_residual, homogeneous_akns
    from .currents import hamiltonian_A, potentials_from_bridge
    from .bridge import hamiltonian
    from .fields import Grid, continuity_residual, mass
    from .hydro import field_from_current, rate_dyn, rate_via_field, solve_nde
    from .models import BUILTIN_NAMES, builtin, einstein_residual

    rows = []

    def add(name, value, thr):
        rows.append((name, float(value), thr, bool(value <= thr)))

    for name in BUILTIN_NAMES:
        model = builtin(name)
        if fault == "double_D_h":
            model = replace(model, D_h=lambda r, f=model.D_h: 2.0 * f(r))
        lo, hi = model.rho_domain
        hi = min(hi, 10.0)
        samples = np.linspace(lo, hi, 102)[1:-1]
        add(f"einstein[{name}]", einstein_residual(model, samples), 1e-8)

    model = builtin("independent")
    grid = Grid(64)
    x = grid.centers
    traj = solve_nde(builtin("zero_range", power=(1.0, 2.0)), 1 + 0.3 * np.cos(2 * np.pi * x),
                     grid, 0.05, 100)
    add("continuity[nde]", continuity_residual(traj.rho, traj.j), 1e-12)
    m = traj.rho.values.sum(axis=1) * grid.dx
    add("mass[nde]", np.max(np.abs(m - m[0])), 1e-12)

    mu0, mu1 = 1 + 0.3 * np.cos(2 * np.pi * x), 1 - 0.3 * np.cos(2 * np.pi * x)
    drifts, res_rev = [], []
    for level in range(refine + 1):
        sol = solve_hsp(BridgeProblem(model, grid, 0.1, 50 * 2**level, mu0, mu1))
        drifts.append(sol.diagnostics["hamiltonian_drift"])
        rev = reverse_bridge(sol)
        res_rev.append(max(canonical_residual(model, rev.solution.rho_star,
                                              rev.solution.H_star)))
        if level == 0:
            add("continuity[bridge]", continuity_residual(sol.rho_star, sol.j_star), 1e-12)
            add("hamiltonian_drift[bridge]", drifts[0], 1e-3)
            back = reverse_bridge(rev.solution)
            add("involution[rho]", np.max(np.abs(back.solution.rho_star.values
                                                 - sol.rho_star.values)), 0.0)
            add("involution[H]", np.max(np.abs(back.solution.H_star.values
                                               - sol.H_star.values)), 1e-12)
            add("born[rho]", np.max(np.abs(born_density(model, sol.H_star.values,
                                                        rev.H_hat.values)
                                           - sol.rho_star.values)), 1e-10)
            E = field_from_current(model, sol.rho_star.values, sol.j_star.values, grid)
            r1 = rate_dyn(model, rho=sol.rho_star, j=sol.j_star)
            r2 = rate_via_field(model, sol.rho_star, sol.j_star.with_values(E))
            add("rate_identity", abs(r1 - r2), 1e-10)
            A, B, mm = potentials_from_bridge(sol)
            hA = hamiltonian_A(model, A.values, B.values, mm, grid)
            h = hamiltonian(model, sol.rho_star.values, sol.H_star.values, grid)
            add("hamA_reduction", np.max(np.abs(hA - h)), 1e-10)
    for k in range(1, len(drifts)):
        add(f"hamiltonian_drift_ratio[{k}]", 1.0 / max(drifts[k - 1] / drifts[k], 1e-300), 1 / 1.8)
        add(f"reversed_residual_ratio[{k}]", res_rev[k] / res_rev[k - 1], 0.75)
    pair = homogeneous_akns(0.7, 0.4, Grid(16).line(), 0.5, 400)
    add("akns[homogeneous]", max(akns_residual(pair)), 1e-5)
    return rows


def cmd_verify(args, cfg) -> int:
    t0 = time.perf_counter()
    rows = verification_suite(refine=int(args.refine or cfg.get("refine", 0)),
                              fault=cfg.get("inject_fault"))
    width = max(len(r[0]) for r in rows)
    print(f"{'check':<{width}}  {'value':>12}  {'threshold':>10}  result")
    for name, val, thr, ok in rows:
        print(f"{name:<{width}}  {val:12.3e}  {thr:10.1e}  {'PASS' if ok else 'FAIL'}")
    failed = [r[0] for r in rows if not r[3]]
    if args.out:
        out = _out_dir(args, cfg)
        _log(out, "verify", cfg, {"rows": rows}, failed, t0)
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_transform(args, cfg) -> int:
    from .bridge import BridgeError
    from .colehopf import akns_residual, akns_transform, ch_forward, XiEtaPair
    from .fields import Grid, SpaceTimeField, read_csv, write_csv

    t0 = time.perf_counter()
    src = cfg.get("solution_dir")
    if src is None:
        raise ConfigError("transform needs 'solution_dir' (a saved bridge solution)")
    src = Path(src)
    meta = json.loads((src / "solution.json").read_text())
    grid = Grid(int(meta["n_cells"]), float(meta["length"]))
    T = float(meta["t_final"])
    rho = read_csv(src / "rho.csv", grid, T)
    H = read_csv(src / "H.csv", grid, T)
    kind = cfg.get("kind", "cole_hopf")
    out = _out_dir(args, cfg)
    _write_config(out, cfg)
    metrics = {}
    if kind == "cole_hopf":
        xi, eta = ch_forward(rho.values, H.values)
        pair = XiEtaPair(rho.with_values(xi, "xi"), rho.with_values(eta, "eta"))
    elif kind == "akns":
        model = _model(cfg.get("model", meta["model"]))
        i0, i1 = cfg.get("window", [0, grid.n_cells])
        sub = Grid(i1 - i0, grid.dx * (i1 - i0)).line()
        r = SpaceTimeField(sub, T, rho.values[:, i0:i1])
        h = SpaceTimeField(sub, T, H.values[:, i0:i1])
        try:
            pair = akns_transform(model, r, h)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        metrics["akns_residual"] = list(akns_residual(pair))
    else:
        raise ConfigError(f"unknown transform kind {kind!r}")
    write_csv(out / "xi_eta.csv", pair.xi, pair.eta, variables=["xi", "eta"])
    _log(out, "transform", cfg, metrics, [], t0)
    print(json.dumps(metrics))
    return EXIT_OK


def cmd_rate(args, cfg) -> int:
    from .fields import read_csv
    from .hydro import field_from_current, rate_dyn, rate_via_field

    t0 = time.perf_counter()
    model = _model(cfg.get("model"))
    grid = _grid(cfg.get("grid"))
    T = float(cfg.get("T", 1.0))
    try:
        rho = read_csv(cfg["rho_csv"], grid, T)
        j = read_csv(cfg["j_csv"], grid, T, "face")
    except KeyError as exc:
        raise ConfigError(f"missing {exc}") from None
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    val = rate_dyn(model, rho=rho, j=j)
    E = j.with_values(field_from_current(model, rho.values, j.values, grid), "E")
    metrics = {"rate_dyn": val, "rate_via_field": rate_via_field(model, rho, E)}
    flags = ["infinite"] if math.isinf(val) else []
    if args.out:
        out = _out_dir(args, cfg)
        _log(out, "rate", cfg, metrics, flags, t0)
    print(json.dumps(metrics))
    return EXIT_OK


COMMANDS = {"bridge": cmd_bridge, "current": cmd_current, "simulate": cmd_simulate,
            "verify": cmd_verify, "transform": cmd_transform, "rate": cmd_rate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hydroschro", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON configuration file")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int)
        s.add_argument("--oracle")
        s.add_argument("--refine", type=int)
        s.add_argument("--replicas", type=int)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
