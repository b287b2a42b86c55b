"""Command-line front end: simulate, compare, sweep, dither-check.

Configs are single JSON documents validated strictly (unknown keys are
rejected, module invariants re-checked at load).  Trajectories go to CSV
with a fixed column schema and 17-significant-digit floats; metrics go to a
JSON sidecar carrying the fully resolved configuration.  Output files are
written to a temporary name and renamed, so no partial file survives a
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from . import costs as costs_mod
from .algorithms import CASES, HaesConfig, StateLayout
from .dither import DitherParams, common_period, verify_average
from .errors import (
    ConfigError,
    HybridseekError,
    IntegrationDivergedError,
    InvalidInputError,
    InvalidStartError,
)
from .harness import (
    DisturbanceSpec,
    RunMetrics,
    RunSetup,
    eval_phi_rows,
    run_experiment,
    run_setup,
    sweep,
)
from .hybrid import HybridArc, HybridSystem, SolveSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

_FMT = "{:.17g}"


def _take(raw: dict, allowed: set[str], required: set[str], context: str) -> None:
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {unknown}")
    missing = sorted(required - set(raw))
    if missing:
        raise ConfigError(f"missing keys in {context}: {missing}")


def load_config(path: str, seed_override: Optional[int] = None) -> tuple[RunSetup, dict]:
    """Parse and validate a simulation config; returns the setup and output opts."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _take(raw, {"case", "cost", "params", "initial", "solve", "disturbance", "output"},
          {"case", "cost", "params", "initial", "solve"}, "config")

    case = raw["case"]
    if case not in CASES:
        raise ConfigError(f"case in {CASES}")

    cost_raw = dict(raw["cost"])
    _take(cost_raw, {"name", "seed"}, {"name"}, "cost")
    cost, con = costs_mod.builtin(cost_raw["name"], seed=cost_raw.get("seed"))

    p = dict(raw["params"])
    _take(p, {"a", "epsilon", "kappas", "k1", "k2", "k", "t_min", "t_med", "t_max",
              "f_tau", "jump_policy", "mu_exact", "mu_tol"},
          {"a", "epsilon", "kappas"}, "params")
    defaults = {"case1": 0.5, "case2": 0.5}.get(case, 0.0)
    cfg = HaesConfig(
        case=case,
        a=float(p["a"]),
        epsilon=float(p["epsilon"]),
        kappas=tuple(p["kappas"]),
        k1=float(p.get("k1", 0.0)),
        k2=float(p.get("k2", 1.0)),
        k=float(p.get("k", 1.0)),
        t_min=float(p.get("t_min", 0.01)),
        t_med=float(p.get("t_med", p.get("t_max", 1.0))),
        t_max=float(p.get("t_max", 1.0)),
        f_tau=float(p.get("f_tau", defaults)),
        jump_policy=p.get("jump_policy", "earliest"),
        mu_exact=bool(p.get("mu_exact", True)),
        mu_tol=float(p.get("mu_tol", 0.25)),
    )
    cfg.validate(cost, con)

    init = dict(raw["initial"])
    _take(init, {"x1", "x2", "tau", "mu"}, {"x1"}, "initial")

    s = dict(raw["solve"])
    _take(s, {"h", "t_max", "j_max", "method", "jump_policy", "seed"},
          {"h", "t_max"}, "solve")
    spec = SolveSpec(
        h=float(s["h"]),
        t_max=float(s["t_max"]),
        j_max=int(s.get("j_max", 10_000)),
        method=s.get("method", "rk4"),
        jump_policy=cfg.jump_policy,
        seed=int(seed_override if seed_override is not None else s.get("seed", 0)),
    )
    spec.validate()

    dist = None
    if "disturbance" in raw:
        d = dict(raw["disturbance"])
        _take(d, {"waveform", "amplitude", "period", "phase", "target"}, set(),
              "disturbance")
        dist = DisturbanceSpec(
            waveform=d.get("waveform", "none"),
            amplitude=float(d.get("amplitude", 0.0)),
            period=float(d.get("period", 1.0)),
            phase=float(d.get("phase", 0.0)),
            target=d.get("target", "probe-term"),
        )
        dist.validate()

    out_raw = dict(raw.get("output", {}))
    _take(out_raw, {"stride", "nus"}, set(), "output")
    output = {
        "stride": int(out_raw.get("stride", 1)),
        "nus": [float(v) for v in out_raw.get("nus", [0.1, 0.01])],
    }
    if output["stride"] < 1:
        raise ConfigError("output stride >= 1")

    target = None
    if con is not None:
        x_star, lam = costs_mod.kkt_point(cost, con, k=cfg.k, inequality=case == "case4")
        target = np.concatenate([x_star, lam])

    setup = RunSetup(
        cfg=cfg, cost=cost, con=con, solve_spec=spec,
        x1_0=np.asarray(init["x1"], dtype=float),
        x2_0=None if "x2" not in init else np.asarray(init["x2"], dtype=float),
        tau_0=None if "tau" not in init else float(init["tau"]),
        mu_0=None if "mu" not in init else np.asarray(init["mu"], dtype=float),
        disturbance=dist, target=target, label=case,
    )
    return setup, output


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_header(layout: StateLayout) -> str:
    cols = ["t", "j", "tau"]
    cols += [f"x1_{i}" for i in range(layout.n)]
    cols += [f"x2_{i}" for i in range(layout.m)]
    cols += [f"mu_{i}" for i in range(2 * layout.n)]
    cols += [f"z_{i}" for i in range(layout.n)]
    cols += ["phi", "subopt"]
    return ",".join(cols)


def write_trajectory_csv(path: Path, arc: HybridArc, system: HybridSystem,
                         stride: int = 1) -> None:
    """CSV dump of an arc, decimated by stride but keeping segment endpoints."""
    layout: StateLayout = system.extras["layout"]
    cfg: HaesConfig = system.extras["cfg"]
    cost = system.extras["cost"]
    phi_star = cost.phi_star
    lines = [csv_header(layout)]
    for seg in arc.segments:
        keep = np.zeros(len(seg.t), dtype=bool)
        keep[::stride] = True
        keep[-1] = True
        t_sel = seg.t[keep]
        rows = seg.states[keep]
        x1 = rows[:, 0 : layout.n]
        z = x1 + cfg.a * rows[:, layout.i_mu : layout.i_mu_end : 2]
        phi_z = eval_phi_rows(cost, z)
        base = phi_star if phi_star is not None else float(phi_z.min())
        for i in range(len(t_sel)):
            vals = [_FMT.format(t_sel[i]), str(seg.j), _FMT.format(rows[i, layout.i_tau])]
            vals += [_FMT.format(v) for v in rows[i, 0 : layout.n + layout.m]]
            vals += [_FMT.format(v) for v in rows[i, layout.i_mu : layout.i_mu_end]]
            vals += [_FMT.format(v) for v in z[i]]
            vals += [_FMT.format(phi_z[i]), _FMT.format(phi_z[i] - base)]
            lines.append(",".join(vals))
    _atomic_write(path, "\n".join(lines) + "\n")


def metrics_payload(metrics: RunMetrics, nus, manifest: dict) -> dict:
    time_to = {repr(nu): _json_num(metrics.time_to(nu)) for nu in nus}
    try:
        t0, t1 = metrics.default_rate_window(min(nus))
        rate = metrics.rate_fit(t0, t1)
    except (InvalidInputError, ValueError):
        rate = None
    payload = {
        "time_to": time_to,
        "rate_fit": rate,
        "jump_count": metrics.jump_count,
        "final_error": _json_num(metrics.final_error),
        "phi_star_mode": metrics.phi_star_mode,
        "manifest": manifest,
    }
    if metrics.x1_err is not None:
        payload["time_to_x1_err"] = {
            repr(nu): _json_num(metrics.time_to(nu, series="x1_err")) for nu in nus
        }
    return payload


def _json_num(v: float):
    if v is None or math.isnan(v):
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _resolved_manifest(setup: RunSetup, output: dict) -> dict:
    return {
        "case": setup.cfg.case,
        "cost": setup.cost.name,
        "params": {
            "a": setup.cfg.a, "epsilon": setup.cfg.epsilon,
            "kappas": [str(k) for k in setup.cfg.kappas],
            "k1": setup.cfg.k1, "k2": setup.cfg.k2, "k": setup.cfg.k,
            "t_min": setup.cfg.t_min, "t_med": setup.cfg.t_med,
            "t_max": setup.cfg.t_max, "f_tau": setup.cfg.f_tau,
            "jump_policy": setup.cfg.jump_policy, "mu_exact": setup.cfg.mu_exact,
        },
        "initial": {
            "x1": setup.x1_0.tolist(),
            "x2": None if setup.x2_0 is None else np.asarray(setup.x2_0).tolist(),
            "tau": setup.tau_0,
        },
        "solve": {
            "h": setup.solve_spec.h, "t_max": setup.solve_spec.t_max,
            "j_max": setup.solve_spec.j_max, "method": setup.solve_spec.method,
            "seed": setup.solve_spec.seed,
        },
        "disturbance": None if setup.disturbance is None else {
            "waveform": setup.disturbance.waveform,
            "amplitude": setup.disturbance.amplitude,
            "period": setup.disturbance.period,
            "phase": setup.disturbance.phase,
        },
        "output": output,
    }


def cmd_simulate(config_path: str, out_path: str, stride: Optional[int] = None,
                 seed: Optional[int] = None) -> int:
    setup, output = load_config(config_path, seed_override=seed)
    if stride is not None:
        if stride < 1:
            raise ConfigError("output stride >= 1")
        output["stride"] = stride
    result = run_setup(setup)
    out = Path(out_path)
    write_trajectory_csv(out, result.arc, result.system, stride=output["stride"])
    payload = metrics_payload(result.metrics, output["nus"],
                              _resolved_manifest(setup, output))
    payload["termination"] = result.arc.termination
    _atomic_write(out.with_suffix(".metrics.json"), json.dumps(payload, indent=2) + "\n")
    return EXIT_OK


def cmd_compare(config_path: str, out_dir: str, stride: Optional[int] = None,
                seed: Optional[int] = None) -> int:
    with open(config_path) as fh:
        raw = json.load(fh)
    _take(raw, {"experiment", "overrides", "output"}, {"experiment"}, "compare config")
    out_raw = dict(raw.get("output", {}))
    _take(out_raw, {"stride", "nus"}, set(), "output")
    nus = [float(v) for v in out_raw.get("nus", [0.1, 0.01])]
    stride = stride if stride is not None else int(out_raw.get("stride", 1))
    result = run_experiment(raw["experiment"], raw.get("overrides"), seed=seed)
    outd = Path(out_dir)
    payload = {"experiment": result.name, "runs": {}, "manifest": result.manifest}
    for label, run in result.runs.items():
        write_trajectory_csv(outd / f"{label}.csv", run.arc, run.system, stride=stride)
        payload["runs"][label] = metrics_payload(run.metrics, nus, {})
        payload["runs"][label].pop("manifest")
        payload["runs"][label]["termination"] = run.arc.termination
    _atomic_write(outd / "metrics.json", json.dumps(payload, indent=2) + "\n")
    return EXIT_OK


def cmd_sweep(config_path: str, out_path: str, seed: Optional[int] = None) -> int:
    with open(config_path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or "sweep" not in raw:
        raise ConfigError("sweep config requires a 'sweep' section")
    sweep_raw = dict(raw.pop("sweep"))
    _take(sweep_raw, {"param", "values"}, {"param", "values"}, "sweep")
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(raw, fh)
        base_path = fh.name
    try:
        setup, output = load_config(base_path, seed_override=seed)
    finally:
        os.unlink(base_path)
    rows = sweep(sweep_raw["param"], [float(v) for v in sweep_raw["values"]], setup)
    payload = {
        "param": sweep_raw["param"],
        "rows": [
            {"value": val, **metrics_payload(m, output["nus"], {})}
            for val, m in rows
        ],
    }
    for row in payload["rows"]:
        row.pop("manifest")
    _atomic_write(Path(out_path), json.dumps(payload, indent=2) + "\n")
    return EXIT_OK


def cmd_dither_check(kappas: list[str], N: int, grid: int) -> int:
    params = DitherParams(kappas=tuple(kappas))
    period = common_period(params.kappas)
    mat_res, vec_res = verify_average(params, N=N, grid_points=grid)
    mat_max = float(np.abs(mat_res).max())
    vec_max = float(np.abs(vec_res).max())
    print(f"T={period} matrix_residual={mat_max:.3e} vector_residual={vec_max:.3e}")
    return EXIT_OK if max(mat_max, vec_max) <= 1e-6 else 1


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="hybridseek",
                                     description="Hybrid extremum-seeking simulations")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one configuration, write CSV + metrics")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--stride", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=None)

    p_cmp = sub.add_parser("compare", help="run a named experiment, one CSV per algorithm")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--out", required=True, help="output directory")
    p_cmp.add_argument("--stride", type=int, default=None)
    p_cmp.add_argument("--seed", type=int, default=None)

    p_swp = sub.add_parser("sweep", help="re-run a config across parameter values")
    p_swp.add_argument("--config", required=True)
    p_swp.add_argument("--out", required=True)
    p_swp.add_argument("--seed", type=int, default=None)

    p_dit = sub.add_parser("dither-check", help="verify the oscillator averaging identities")
    p_dit.add_argument("--kappa", action="append", required=True,
                       help="frequency as a decimal or fraction; repeatable")
    p_dit.add_argument("--periods", type=int, default=1)
    p_dit.add_argument("--grid", type=int, default=10_000)

    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out, args.stride, args.seed)
        if args.command == "compare":
            return cmd_compare(args.config, args.out, args.stride, args.seed)
        if args.command == "sweep":
            return cmd_sweep(args.config, args.out, args.seed)
        if args.command == "dither-check":
            return cmd_dither_check(args.kappa, args.periods, args.grid)
        parser.error(f"unknown command {args.command!r}")
    except IntegrationDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, InvalidInputError, InvalidStartError, json.JSONDecodeError,
            FileNotFoundError, KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HybridseekError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
