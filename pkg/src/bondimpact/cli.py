"""Command-line entry point.

Subcommands: simulate-curve, price-eurodollar, optexec, hjm-check, selftest.
All artifacts land under --out; meta.json records the config hash, seed,
version, exclusion counts and timings so a run can be reproduced exactly.
Exit codes: 0 success, 2 validation error, 3 numerical-regime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, curves, execution, hjm, pricing
from .errors import ConfigError, NumericsError, ValidationError
from .impact import ImpactSpec, SpeedSchedule
from .rates import VasicekModel

_CURVE_SCHEMA = {
    "model": {"kind": None, "k": None, "theta": None, "sigma": None, "r0": None},
    "lam": None,
    "maturities": None,
    "traded_maturity": None,
    "impact": {"kappa": None, "alpha": None, "beta": None, "rho": None, "gamma": None, "y": None},
    "speed": {"kind": None, "c": None, "tau_days": None, "path": None},
    "horizon_years": None,
    "n_steps": None,
    "n_paths": None,
    "seed": None,
    "snapshot_days": None,
    "rho_sweep": None,
    "k_sweep": None,
    "sweep_maturity": None,
    "obs_day": None,
    "crossing_atol": None,
}

_OPTEXEC_SCHEMA = {
    "x": None,
    "tau_days": None,
    "phi": None,
    "varrho": None,
    "impact": {"family": None, "kappa": None, "K0": None, "alpha": None, "beta": None,
               "rho": None, "gamma": None, "y": None, "T": None},
    "price0": None,
    "mu": {"times": None, "values": None},
    "n_steps": None,
    "oracle_steps": None,
    "seed": None,
}


def _reject_unknown_keys(config: dict, schema: dict, path: str = ""):
    for key, value in config.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(schema[key], dict) and isinstance(value, dict):
            _reject_unknown_keys(value, schema[key], here)


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (int, float, np.floating)) else x for x in row])


def _write_meta(out: Path, config: dict, seed, exclusions, timings):
    meta = {
        "config_hash": _config_hash(config),
        "seed": seed,
        "version": __version__,
        "exclusion_counts": exclusions,
        "timings": timings,
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def _build_speed(block: dict, tau: float) -> SpeedSchedule:
    kind = block.get("kind", "constant")
    if kind == "constant":
        return SpeedSchedule.constant(float(block["c"]), tau)
    if kind == "csv":
        return SpeedSchedule.from_csv(block["path"])
    raise ConfigError(f"speed.kind must be 'constant' or 'csv', got {kind!r}")


def build_curve_config(config: dict, seed=None, validate_only: bool = False):
    _reject_unknown_keys(config, _CURVE_SCHEMA)
    violations = []

    def need(key):
        if key not in config:
            violations.append(f"{key}: required key missing")
            return False
        return True

    model = None
    if need("model"):
        mb = config["model"]
        if mb.get("kind", "vasicek") != "vasicek":
            violations.append("model.kind: only 'vasicek' supported by the curve experiment")
        else:
            try:
                model = VasicekModel(k=mb["k"], theta=mb["theta"], sigma=mb["sigma"], r0=mb["r0"])
            except (ValidationError, KeyError) as exc:
                violations.append(f"model: {exc}")

    spec = None
    tau = None
    if need("impact") and need("speed") and need("traded_maturity"):
        ib = config["impact"]
        tau = float(config["speed"].get("tau_days", 10.0)) / 365.0
        try:
            spec = ImpactSpec(
                rho=ib["rho"],
                gamma=ib["gamma"],
                y=ib["y"],
                T=float(config["traded_maturity"]),
                tau=tau,
                kappa=ib["kappa"],
                alpha=ib.get("alpha", 1.0),
                beta=ib.get("beta", 1.0),
            )
        except (ValidationError, KeyError) as exc:
            violations.append(f"impact: {exc}")

    cfg = None
    if model is not None and spec is not None and not violations:
        try:
            cfg = curves.CurveExperimentConfig(
                model=model,
                maturities=tuple(float(m) for m in config["maturities"]),
                traded_maturity=float(config["traded_maturity"]),
                impact=spec,
                speed=_build_speed(config["speed"], tau),
                horizon=float(config.get("horizon_years", 1.0)),
                n_steps=int(config.get("n_steps", 365)),
                n_paths=int(config.get("n_paths", 10000)),
                seed=int(seed if seed is not None else config.get("seed", 0)),
                lam=float(config.get("lam", 0.0)),
                snapshot_days=tuple(config.get("snapshot_days", (5, 11, 270))),
                crossing_atol=float(config.get("crossing_atol", 1e-6)),
            )
        except (ValidationError, KeyError) as exc:
            violations.append(f"experiment: {exc}")
    if validate_only:
        return violations
    if violations:
        raise ConfigError("; ".join(violations))
    return cfg


def validate_config(config: dict, kind: str = "simulate-curve") -> list[str]:
    """Report-only validation: every violated module invariant with its key
    path, without running anything."""
    try:
        if kind == "simulate-curve":
            return build_curve_config(config, validate_only=True)
        if kind == "optexec":
            build_optexec_problem(config)
            return []
        raise ConfigError(f"unknown config kind {kind!r}")
    except ValidationError as exc:
        return [str(exc)]


def _cmd_simulate_curve(args) -> int:
    with open(args.config) as fh:
        config = json.load(fh)
    violations = build_curve_config(config, seed=args.seed, validate_only=True)
    if violations:
        for v in violations:
            print(f"config error: {v}", file=sys.stderr)
        return 2
    cfg = build_curve_config(config, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}

    t0 = time.perf_counter()
    result = curves.simulate_impacted_curve(cfg, threads=args.threads)
    timings["simulate_curve_s"] = time.perf_counter() - t0

    for snap in result.snapshots:
        rows = [
            (
                m,
                snap.Y_mean[j],
                snap.Ytilde_mean[j],
                snap.Y_se[j],
                snap.Ytilde_se[j],
                snap.Y_of_mean_price[j],
                snap.Ytilde_of_mean_price[j],
            )
            for j, m in enumerate(snap.maturities)
        ]
        _write_csv(
            out / f"yield_curves_t{int(round(snap.day))}.csv",
            ["maturity", "Y_mean", "Ytilde_mean", "Y_se", "Ytilde_se", "Y_of_mean_P", "Ytilde_of_mean_P"],
            rows,
        )

    for j, m in enumerate(cfg.maturities):
        rows = zip(
            result.times * 365.0,
            result.P_mean[j],
            result.Ptilde_mean[j],
            result.P_se[j],
            result.Ptilde_se[j],
        )
        _write_csv(
            out / f"bond_paths_T{m:g}.csv",
            ["t_days", "P_mean", "Ptilde_mean", "P_se", "Ptilde_se"],
            rows,
        )

    crossings = curves.first_crossing_time(result)
    with open(out / "crossing_times.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["maturity", "crossing_day", "degenerate"])
        for m, info in crossings.items():
            day = "none" if info["day"] is None else repr(info["day"])
            w.writerow([repr(float(m)), day, int(info["degenerate"])])

    if config.get("rho_sweep"):
        t0 = time.perf_counter()
        sweep = curves.rho_sweep(
            cfg, config["rho_sweep"], sweep_maturity=float(config.get("sweep_maturity", 1.0)),
            threads=args.threads,
        )
        timings["rho_sweep_s"] = time.perf_counter() - t0
        rhos = sorted(sweep["impacted"])
        header = ["t_days", "P_mean"] + [f"Ptilde_mean_rho{r:g}" for r in rhos]
        rows = zip(
            sweep["times"] * 365.0,
            sweep["unimpacted"],
            *[sweep["impacted"][r] for r in rhos],
        )
        _write_csv(out / "rho_sweep.csv", header, rows)

    if config.get("k_sweep"):
        t0 = time.perf_counter()
        ksweep = curves.mean_reversion_sweep(
            cfg, config["k_sweep"], obs_day=float(config.get("obs_day", 270.0)), threads=args.threads
        )
        timings["k_sweep_s"] = time.perf_counter() - t0
        rows = []
        for k, snap in sorted(ksweep.items()):
            for j, m in enumerate(snap.maturities):
                rows.append(
                    (k, m, snap.Y_mean[j], snap.Ytilde_mean[j], snap.Y_se[j], snap.Ytilde_se[j],
                     snap.Ytilde_mean[j] - snap.Y_mean[j])
                )
        _write_csv(
            out / "k_sweep.csv",
            ["k", "maturity", "Y_mean", "Ytilde_mean", "Y_se", "Ytilde_se", "gap"],
            rows,
        )

    exclusions = {f"{m:g}": int(c) for m, c in zip(cfg.maturities, result.degenerate_counts)}
    meta_cfg = dict(config)
    meta_cfg["seed"] = cfg.seed
    _write_meta(out, meta_cfg, cfg.seed, exclusions, timings)
    with open(out / "meta.json") as fh:
        meta = json.load(fh)
    meta["pull_to_par_gap"] = {f"{k:g}": v for k, v in result.pull_to_par_gap.items()}
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    print(
        f"simulate-curve: {cfg.n_paths} paths x {cfg.n_steps} steps, "
        f"{len(cfg.maturities)} maturities -> {out} ({timings['simulate_curve_s']:.1f}s)"
    )
    return 0


def _cmd_price_eurodollar(args) -> int:
    model = VasicekModel(k=args.k, theta=args.theta, sigma=args.sigma, r0=args.r0)
    mpr = pricing.MprConfig(lam=args.lam, lam_tilde=args.lam_tilde)
    closed = pricing.eurodollar_closed_form(
        model, mpr, args.expiry, args.maturity, args.notional, args.daycount
    )
    closed_lit = pricing.eurodollar_closed_form(
        model, mpr, args.expiry, args.maturity, args.notional, args.daycount,
        mean_convention="paper-literal",
    )
    mc_price, mc_se = pricing.eurodollar_mc(
        model, mpr, args.expiry, args.maturity, args.notional, args.daycount,
        seed=args.seed, n_paths=args.n_paths,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "eurodollar.csv",
        ["closed_form", "mc_price", "mc_se", "n_paths", "closed_form_literal_mean"],
        [(closed, mc_price, mc_se, float(args.n_paths), closed_lit)],
    )
    config = {k: getattr(args, k) for k in
              ("k", "theta", "sigma", "r0", "lam", "lam_tilde", "expiry", "maturity",
               "notional", "daycount", "n_paths", "seed")}
    _write_meta(out, config, args.seed, {}, {})
    print(f"price-eurodollar: closed={closed:.6f} mc={mc_price:.6f} (se {mc_se:.2e}) -> {out}")
    return 0


def build_optexec_problem(config: dict) -> execution.ExecutionProblem:
    _reject_unknown_keys(config, _OPTEXEC_SCHEMA)
    tau = float(config["tau_days"]) / 365.0
    ib = config["impact"]
    family = ib.get("family", "constant")
    if family == "constant":
        spec = ImpactSpec.constant(
            l0=ib["kappa"], K0=ib.get("K0", ib["kappa"]), rho=ib["rho"], gamma=ib["gamma"],
            y=ib.get("y", 0.0), tau=tau, T=ib.get("T", max(1.0, 2 * tau)),
        )
    else:
        spec = ImpactSpec(
            rho=ib["rho"], gamma=ib["gamma"], y=ib.get("y", 0.0), T=ib["T"], tau=tau,
            kappa=ib["kappa"], alpha=ib.get("alpha", 1.0), beta=ib.get("beta", 1.0),
        )
    mu = None
    if config.get("mu"):
        mu = (np.asarray(config["mu"]["times"], dtype=float),
              np.asarray(config["mu"]["values"], dtype=float))
    return execution.ExecutionProblem(
        x=float(config["x"]), tau=tau, phi=float(config["phi"]), varrho=float(config["varrho"]),
        impact=spec, price0=float(config["price0"]), mu=mu,
    )


def _cmd_optexec(args) -> int:
    with open(args.config) as fh:
        config = json.load(fh)
    problem = build_optexec_problem(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()
    sol = execution.solve_execution(problem, n_steps=int(config.get("n_steps", 2000)))
    timings["solve_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    _, v_star, oracle_obj = execution.brute_force_qp(problem, n_steps=int(config.get("oracle_steps", 500)))
    timings["oracle_s"] = time.perf_counter() - t0

    _write_csv(
        out / "schedule.csv",
        ["t", "v", "X", "Upsilon", "Z"],
        zip(sol.times, sol.v, sol.X, sol.Upsilon, sol.Z),
    )
    _write_csv(
        out / "coeffs.csv",
        ["t", "v0", "v1", "v2", "v3", "G1", "G2", "G3", "G4"],
        zip(sol.times, *[sol.coeffs[:, j] for j in range(4)], *[sol.G[:, j] for j in range(4)]),
    )
    gap = abs(sol.objective - oracle_obj) / abs(oracle_obj) if oracle_obj != 0 else abs(sol.objective)
    report = {
        "objective": sol.objective,
        "oracle_objective": oracle_obj,
        "relative_gap": gap,
        "foc_sup_residual": sol.foc_sup,
        "terminal_identity_error": sol.terminal_identity_error,
        "admissibility": sol.admissibility.as_dict(),
        "picard_iterations": sol.picard_iterations,
        "liouville_error": sol.liouville_error,
    }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    _write_meta(out, config, int(config.get("seed", 0)), {}, timings)
    print(
        f"optexec: objective={sol.objective:.8f} oracle={oracle_obj:.8f} "
        f"gap={gap:.2e} foc_sup={sol.foc_sup:.2e} -> {out}"
    )
    return 0


def _cmd_hjm_check(args) -> int:
    lattice = hjm.ForwardLattice.from_csv(args.lattice)
    gammas = []
    with open(args.gamma, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                gammas.append((float(row[0]), float(row[1])))
            except ValueError:
                continue
    gamma = np.interp(lattice.t_grid, [g[0] for g in gammas], [g[1] for g in gammas])
    residual = hjm.hjm_condition_residual(lattice, gamma)
    finite = residual[~np.isnan(residual)]
    report = {
        "sup_residual": float(np.max(np.abs(finite))),
        "mean_abs_residual": float(np.mean(np.abs(finite))),
        "n_calendar": int(lattice.t_grid.size),
        "n_maturities": int(lattice.T_grid.size),
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_selftest(args) -> int:
    """Fast closed-form identities; each line must print ok."""
    from . import bonds, impact as impact_mod
    from .grids import TimeGrid

    checks = []
    model = VasicekModel(k=0.2, theta=0.1, sigma=0.05, r0=0.01)
    cf = bonds.affine_coeffs(model, 5.0, 5.0)
    checks.append(("bond coeffs terminal (A,B)=(1,0)", abs(cf.A - 1) < 1e-14 and abs(cf.B) < 1e-14))
    checks.append(("unit price has zero yield", bonds.yield_from_price(1.0, 7.0) == 0.0))
    grid = TimeGrid(0.0, 10.0 / 365.0, 10)
    spec = ImpactSpec(rho=2.0, gamma=1.0, y=0.01, T=5.0, tau=10.0 / 365.0)
    ups = impact_mod.transient_impact(SpeedSchedule.zero(spec.tau), spec, grid)
    decay = 0.01 * np.exp(-2.0 * grid.times)
    checks.append(("pure transient decay", float(np.max(np.abs(ups - decay))) < 1e-14))
    zero_imp = impact_mod.overall_impact(SpeedSchedule.zero(spec.tau), spec, TimeGrid(0.0, 5.0, 50))
    checks.append(("kernels vanish at maturity", abs(zero_imp[-1]) < 1e-14))
    prob = execution.ExecutionProblem(
        x=0.0, tau=10 / 365, phi=0.0, varrho=0.0,
        impact=ImpactSpec.constant(0.01, 0.01, 2.0, 1.0, 0.0, 10 / 365, 5.0), price0=0.9,
    )
    sol = execution.solve_execution(prob, n_steps=200)
    checks.append(("nothing to trade -> zero schedule", float(np.max(np.abs(sol.v))) < 1e-12))
    ok = True
    for name, passed in checks:
        print(f"{'ok' if passed else 'FAIL'} - {name}")
        ok &= passed
    return 0 if ok else 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bondimpact", description=__doc__)
    parser.add_argument("--threads", type=int, default=int(os.environ.get("THREADS", "1")))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-curve", help="averaged impacted vs unimpacted curve experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_simulate_curve)

    p = sub.add_parser("price-eurodollar", help="impacted Eurodollar future: closed form vs Monte Carlo")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--r0", type=float, required=True)
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--lam-tilde", dest="lam_tilde", type=float, default=0.0)
    p.add_argument("--expiry", type=float, required=True, help="futures expiry (years)")
    p.add_argument("--maturity", type=float, required=True, help="underlying bond maturity (years)")
    p.add_argument("--notional", type=float, default=1.0)
    p.add_argument("--daycount", default="act365")
    p.add_argument("--n-paths", dest="n_paths", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_price_eurodollar)

    p = sub.add_parser("optexec", help="optimal execution: feedback solution + brute-force certificate")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_optexec)

    p = sub.add_parser("hjm-check", help="forward-curve drift-condition residual norms")
    p.add_argument("--lattice", required=True)
    p.add_argument("--gamma", required=True)
    p.set_defaults(func=_cmd_hjm_check)

    p = sub.add_parser("selftest", help="fast closed-form identity checks")
    p.set_defaults(func=_cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
