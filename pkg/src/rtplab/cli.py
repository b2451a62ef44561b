"""Command-line front end: run scenarios, sweep grids, and query the analysis."""

from __future__ import annotations

import argparse
import csv
import itertools
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attacks import AttackSpec, mu_ceo
from .errors import (
    AnalysisError,
    IngestionError,
    RtplabError,
    ScenarioError,
)
from .models import fit_linear_supply
from .scenarios import (
    Scenario,
    apply_overrides,
    build_scenario,
    load_scenario_dict,
    preset_names,
    preset_path,
)
from .sim import (
    SimConfig,
    convergence_probability,
    default_feeder_rating,
    feeder_events,
    mean_marginal_ratio,
    run,
    settled_at_end,
    stabilized_probability,
    volatility,
)
from .stability import (
    CharPoly,
    boundary_curve,
    delay_ros_limit,
    jury_verdict,
    roots_in_unit_circle,
    scaling_eta_bar,
    scaling_ros_limit,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _parse_sets(pairs) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ScenarioError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _load(args) -> tuple[dict, Path, str]:
    """Scenario dict, its base dir, and a display name from CLI arguments."""
    if args.preset and args.scenario:
        raise ScenarioError("give either a scenario path or --preset, not both")
    if args.preset:
        path = preset_path(args.preset)
        name = args.preset
    elif args.scenario:
        path = Path(args.scenario)
        name = path.stem
    else:
        raise ScenarioError(
            f"no scenario given; presets: {', '.join(preset_names())}"
        )
    return load_scenario_dict(path), path.parent, name


def _build(args, extra: dict[str, str] | None = None) -> tuple[Scenario, str]:
    data, base, name = _load(args)
    overrides = _parse_sets(getattr(args, "set", None))
    if extra:
        overrides.update(extra)
    if getattr(args, "seed", None) is not None:
        overrides["simulation.seed"] = str(args.seed)
    if overrides:
        data = apply_overrides(data, overrides)
    return build_scenario(data, base_dir=base), name


def _resolve_rating(scenario: Scenario) -> float | None:
    if scenario.feeder_rating_mode == "fixed":
        return scenario.config.feeder_rating
    if scenario.feeder_rating_mode == "auto":
        benign = replace(scenario.config, attack=AttackSpec(kind="none"))
        return default_feeder_rating(run(benign))
    return None


def _summary(trace, rating) -> dict:
    post_sigma = volatility(trace)
    out = {
        "horizon": len(trace),
        "attack_start": trace.attack_start,
        "converged_at": trace.converged_at,
        "diverged_at": trace.diverged_at,
        "settled_at_end": settled_at_end(trace),
        "sigma_e": post_sigma,
        "mean_h": mean_marginal_ratio(trace),
        "final_lambda": float(trace.lam[-1]),
        "feeder_rating": rating,
    }
    if rating is not None:
        days = feeder_events(trace, rating)
        out["emergency_days"] = sum(1 for _, f, _ in days if f > 0.0)
        out["max_emergency_frequency"] = max(f for _, f, _ in days)
        out["max_overload_pct"] = max(o for _, _, o in days)
    return out


def cmd_simulate(args) -> int:
    scenario, name = _build(args)
    out_dir = Path(args.out or scenario.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    rating = _resolve_rating(scenario)
    trace = run(scenario.config)

    trace.write_csv(out_dir / "trace.csv")
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "emergency_frequency", "max_overload_pct"])
        if rating is not None:
            for day, freq, over in feeder_events(trace, rating):
                writer.writerow([day, repr(freq), repr(over)])

    lines = [f"scenario: {name}"]
    lines += [f"{k}: {v}" for k, v in _summary(trace, rating).items()]
    text = "\n".join(lines)
    (out_dir / "summary.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def _sweep_cell(payload):
    """Worker: build and run one sweep cell; exceptions become in-row errors."""
    data, base, keys, values, seed = payload
    try:
        cell = apply_overrides(data, dict(zip(keys, values)))
        cell = apply_overrides(cell, {"simulation.seed": str(seed)})
        scenario = build_scenario(cell, base_dir=Path(base))
        trace = run(scenario.config)
        return list(values) + [
            repr(volatility(trace)),
            str(settled_at_end(trace)).lower(),
            repr(mean_marginal_ratio(trace)),
            "",
        ]
    except RtplabError as exc:
        return list(values) + ["", "", "", f"{type(exc).__name__}: {exc}"]


def cmd_sweep(args) -> int:
    data, base, name = _load(args)
    overrides = _parse_sets(args.set)
    grid_spec: dict[str, list[str]] = {}
    fixed: dict[str, str] = {}
    for key, value in overrides.items():
        vals = [v.strip() for v in value.split(",") if v.strip()]
        (grid_spec if len(vals) > 1 else fixed)[key] = vals if len(vals) > 1 else vals[0]
    if fixed:
        data = apply_overrides(data, fixed)
    if not grid_spec:
        grid_spec = dict(data.get("sweep", {}))
        grid_spec = {
            k: [v.strip() for v in str(vals).split(",") if v.strip()]
            for k, vals in grid_spec.items()
        }
    if not grid_spec:
        raise ScenarioError("empty sweep grid: give --set key=v1,v2 or a [sweep] section")
    data.pop("sweep", None)

    base_seed = args.seed if args.seed is not None else int(
        data.get("simulation", {}).get("seed", 0)
    )
    keys = list(grid_spec)
    cells = list(itertools.product(*(grid_spec[k] for k in keys)))
    payloads = [
        (data, str(base), keys, values, base_seed + idx)
        for idx, values in enumerate(cells)
    ]
    # validate the base scenario once up front so config errors exit cleanly
    build_scenario(data, base_dir=base)

    if args.workers and args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_cell, payloads))
    else:
        rows = [_sweep_cell(p) for p in payloads]

    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    grid_path = out_dir / "grid.csv"
    with open(grid_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys + ["sigma_e", "converged", "mean_h", "error"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} cells to {grid_path}")
    return EXIT_OK


def _parse_grid(spec: str) -> np.ndarray:
    try:
        lo, hi, n = spec.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError as exc:
        raise ScenarioError(f"grid spec must be lo:hi:n, got {spec!r}") from exc


def _resolve_mu(args) -> float | None:
    if args.mu is not None:
        return args.mu
    if args.epsilon is not None:
        return mu_ceo(args.gamma, args.epsilon)
    return None


def cmd_ros(args) -> int:
    h_grid = _parse_grid(args.h_grid)
    if args.log:
        h_grid = np.logspace(np.log10(h_grid[0]), np.log10(h_grid[-1]), h_grid.size)
    mu = _resolve_mu(args)
    if args.family in ("scaling", "scaled_delay") and mu is None:
        raise ScenarioError(f"{args.family} family needs --mu or --epsilon")
    curve = boundary_curve(
        args.family, args.rho, h_grid,
        tau=args.tau, gamma=args.gamma, mu=mu,
    )
    writer = csv.writer(_open_out(args.out))
    writer.writerow(["h", "eta_bar"])
    for h, eta in curve.samples:
        writer.writerow([repr(h), repr(eta)])
    if curve.anomalies:
        print(f"warning: non-monotone stability at h={sorted(curve.anomalies)}",
              file=sys.stderr)
    return EXIT_OK


def _open_out(path):
    if path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        return open(p, "w", newline="")
    return sys.stdout


def cmd_ros_limit(args) -> int:
    rhos = [float(v) for v in args.rho.split(",")]
    writer = csv.writer(_open_out(args.out))
    writer.writerow(["rho", "tau_or_gamma", "eta_limit"])
    big_h = 1e10
    for rho in rhos:
        if args.family == "delay":
            params = [int(v) for v in args.tau.split(",")]
        else:
            params = [float(v) for v in args.gamma.split(",")]
        for par in params:
            if args.family == "delay":
                limit = delay_ros_limit(rho, par)
                if args.validate:
                    ref = boundary_curve("delay", rho, [big_h], tau=par).samples[0][1]
                    if abs(limit - ref) > 1e-4:
                        raise AnalysisError(
                            f"limit {limit} disagrees with Jury at h={big_h}: {ref}"
                        )
            else:
                mu = mu_ceo(par, args.epsilon) if args.epsilon is not None else args.mu
                if mu is None:
                    raise ScenarioError("scaling family needs --epsilon or --mu")
                limit = scaling_ros_limit(rho, par, mu)
                if args.validate:
                    ref = min(1.0, scaling_eta_bar(big_h, rho, par, mu))
                    if abs(limit - ref) > 1e-4:
                        raise AnalysisError(
                            f"limit {limit} disagrees with eta_bar at h={big_h}: {ref}"
                        )
            writer.writerow([repr(rho), repr(par), repr(limit)])
    return EXIT_OK


def cmd_jury(args) -> int:
    try:
        coeffs = [float(v) for v in args.coeffs.split(",")]
    except ValueError as exc:
        raise ScenarioError(f"coefficients must be numbers: {exc}") from exc
    poly = CharPoly(tuple(coeffs))
    verdict = jury_verdict(poly)
    _, max_mag = roots_in_unit_circle(poly)
    print(f"{verdict} max_root_magnitude={max_mag!r}")
    return EXIT_OK


def cmd_fit_supply(args) -> int:
    prices, supplies = [], []
    with open(args.csv, newline="") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            try:
                lam, x = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if i == 1:
                    continue  # header row
                raise IngestionError("unparseable price/supply row", row=i)
            prices.append(lam)
            supplies.append(x)
    model = fit_linear_supply(prices, supplies)
    pred = model.p * np.asarray(prices) + model.q
    resid = np.asarray(supplies) - pred
    ss_tot = float(np.sum((supplies - np.mean(supplies)) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    print(f"p = {model.p!r}")
    print(f"q = {model.q!r}")
    print(f"r_squared = {r2!r}")
    print(f"residual_std = {float(np.std(resid))!r}")
    if args.scale:
        opts = dict(tok.split("=", 1) for tok in args.scale)
        missing = {"houses", "share", "population"} - set(opts)
        if missing:
            raise ScenarioError(f"--scale needs houses=, share=, population= (missing {missing})")
        factor = float(opts["share"]) / (float(opts["population"]) / float(opts["houses"]))
        print(f"scaled_p = {model.p * factor!r}")
        print(f"scaled_q = {model.q * factor!r}")
    return EXIT_OK


def _map_cell(payload):
    b, lam_star, eps, kind, lam_min, lam_max, n_init, max_iter = payload
    from .controller import ControllerConfig
    from .models import LinearSupply

    supplier = LinearSupply(152.0, 4503.0)
    cfg = ControllerConfig(mode="direct", lambda_min=lam_min, lambda_max=lam_max)
    fn = convergence_probability if kind == "direct" else stabilized_probability
    prob = fn(supplier, b, eps, lam_star, controller=cfg,
              n_initial=n_init, max_iter=max_iter)
    return lam_star, eps, prob


def cmd_stability_map(args) -> int:
    lam_stars = _parse_grid(args.lambda_star)
    epsilons = _parse_grid(args.epsilon)
    cells = [
        (args.b, float(ls), float(e), args.law, args.lambda_min, args.lambda_max,
         args.n_initial, args.max_iter)
        for ls in lam_stars for e in epsilons
    ]
    if args.workers and args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_map_cell, cells))
    else:
        results = [_map_cell(c) for c in cells]
    writer = csv.writer(_open_out(args.out))
    writer.writerow(["lambda_star", "epsilon", "probability"])
    for lam_star, eps, prob in results:
        writer.writerow([repr(lam_star), repr(eps), repr(prob)])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtplab",
        description="Real-time pricing loop: simulation, attacks, and stability analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenario_args(p):
        p.add_argument("scenario", nargs="?", help="scenario file (.ini or .json)")
        p.add_argument("--preset", help=f"bundled preset ({', '.join(preset_names())})")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a scenario value (repeatable)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the scenario seed")

    p = sub.add_parser("simulate", help="run one scenario, write trace and metrics")
    add_scenario_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a parameter grid of scenarios")
    add_scenario_args(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ros", help="stability boundary eta_bar(h) for an attack family")
    p.add_argument("--family", choices=("scaling", "delay", "scaled_delay"), required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--tau", type=int)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--h-grid", default="0.1:10:50", help="lo:hi:n")
    p.add_argument("--log", action="store_true", help="log-spaced h grid")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ros)

    p = sub.add_parser("ros-limit", help="gain bound valid for every slope ratio")
    p.add_argument("--family", choices=("scaling", "delay"), required=True)
    p.add_argument("--rho", required=True, help="comma list")
    p.add_argument("--tau", help="comma list (delay family)")
    p.add_argument("--gamma", help="comma list (scaling family)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--validate", action="store_true",
                   help="cross-check each limit against the Jury test at h=1e10")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ros_limit)

    p = sub.add_parser("jury", help="Jury verdict for a polynomial (descending coefficients)")
    p.add_argument("coeffs", help="comma-separated, e.g. 2,-1.6,0.4")
    p.set_defaults(func=cmd_jury)

    p = sub.add_parser("fit-supply", help="least-squares supply fit from price,supply CSV")
    p.add_argument("csv")
    p.add_argument("--scale", nargs="*", metavar="KEY=VALUE",
                   help="houses=N share=S population=P downscaling")
    p.set_defaults(func=cmd_fit_supply)

    p = sub.add_parser("stability-map", help="direct-feedback convergence-probability map")
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--lambda-star", default="2:100:50", help="lo:hi:n")
    p.add_argument("--epsilon", default="-0.95:-0.05:19", help="lo:hi:n")
    p.add_argument("--lambda-min", type=float, default=1.0)
    p.add_argument("--lambda-max", type=float, default=100.0)
    p.add_argument("--law", choices=("direct", "stabilized"), default="direct")
    p.add_argument("--n-initial", type=int, default=101)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stability_map)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ScenarioError, IngestionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RtplabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
