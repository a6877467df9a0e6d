"""Command-line front end.

Subcommands: ``ingest`` (raw CSV -> canonical events + area index),
``simulate`` (trace generation), ``fit`` (EM on events), ``plan``
(one-shot intervention plan), ``sweep`` (strategy-comparison experiment),
``la`` (fit + per-budget tables), ``report`` (re-emit series/summary from a
sweep CSV).  All outputs are deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, ingest
from .estimator import EMConfig, EMInit, em_fit
from .expectation import state_at
from .model import (
    History,
    InterventionPlan,
    load_params,
    save_params,
    validate,
)
from .planner import (
    KIND_INVASION,
    KIND_RATE,
    METHOD_COUNT,
    METHOD_MU,
    build_objective,
    heuristic_plan,
    solution_record,
    solve_exact,
    solve_lp_relax,
)
from .simulate import BACKEND_BRANCHING, BACKEND_THINNING, SimConfig, simulate


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _write_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_ingest(args) -> int:
    column_map = {
        "time": args.col_time,
        "lat": args.col_lat,
        "lon": args.col_lon,
        "area": args.col_area,
    }
    include = None
    if args.include_types:
        column_map["type"] = args.col_type
        include = {t.strip() for t in args.include_types.split(",")}
    loaded = ingest.load_csv(args.input, column_map, include)
    area_index = ingest.build_area_index(loaded.records)
    proj = ingest.default_projection(loaded.records)
    history = ingest.to_history(loaded.records, proj, area_index)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ingest.write_event_csv(history, out / "events.csv")
    _write_json(area_index, out / "area_index.json")
    _write_json(
        {"origin_lat": proj.origin_lat, "origin_lon": proj.origin_lon},
        out / "projection.json",
    )
    with open(out / "rejects.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["line", "reason"])
        writer.writerows(loaded.rejects)
    print(
        f"ingested {len(loaded.records)} records over {len(area_index)} areas "
        f"({len(loaded.rejects)} rejected) -> {out}"
    )
    return 0


def _cmd_simulate(args) -> int:
    vp = validate(load_params(args.params))
    config = SimConfig(horizon=args.T, seed=args.seed, backend=args.backend)
    result = simulate(vp, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    history = History.from_events(result.events, args.T)
    ingest.write_event_csv(history, out / "events.csv")
    print(f"simulated {len(result.events)} events on [0, {args.T:g}] -> {out}/events.csv")
    return 0


def _cmd_fit(args) -> int:
    history = ingest.read_event_csv(args.events)
    n = args.n if args.n is not None else max(e.node for e in history.events) + 1
    grid = _floats(args.bandwidth_grid) if args.bandwidth_grid else None
    config = EMConfig(
        max_iters=args.max_iters,
        tol=args.tol,
        init=EMInit(seed=args.seed),
        bandwidth_grid=grid,
    )
    fit = em_fit(history, n, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_params(fit.params, out / "params.json")
    with open(out / "loglik_trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "log_likelihood"])
        for i, ll in enumerate(fit.log_lik_trace):
            writer.writerow([i, repr(ll)])
    _write_json(
        {
            "n_events": len(history),
            "n_iters": fit.n_iters,
            "delta": fit.delta,
            "omega": fit.params.omega,
            "sigma": fit.params.sigma,
            "background_fraction": fit.background_fraction,
            "responsibilities_digest": fit.responsibilities_digest,
            "final_log_likelihood": fit.log_lik_trace[-1],
        },
        out / "fit_summary.json",
    )
    print(
        f"fitted {n}-node model on {len(history)} events in {fit.n_iters} iterations "
        f"(loglik {fit.log_lik_trace[-1]:.2f}) -> {out}"
    )
    return 0


def _cmd_plan(args) -> int:
    vp = validate(load_params(args.params))
    history = ingest.read_event_csv(args.events)
    tau = args.tau if args.tau is not None else history.horizon
    T = args.T if args.T is not None else 2.0 * tau
    state = state_at(history, tau, vp.omega)
    costs = args.base_cost + history.counts(vp.n)
    if args.budget is not None:
        budget = args.budget
    elif args.q is not None:
        budget = float(costs.sum()) * args.q / 100.0
    else:
        print("error: provide --budget or --q", file=sys.stderr)
        return 2
    template = InterventionPlan(
        np.ones(vp.n), p=args.p, gamma=args.gamma, tau=tau, T=T, costs=costs, budget=0.0
    )
    kind = KIND_INVASION if args.objective == "invasion" else KIND_RATE
    if args.strategy == "exact-rate":
        obj = build_objective(KIND_RATE, vp, template, state)
        sol = solve_exact(obj, costs, budget)
    elif args.strategy == "exact-invasion":
        obj = build_objective(KIND_INVASION, vp, template, state)
        sol = solve_exact(obj, costs, budget)
    elif args.strategy == "lp-relax":
        obj = build_objective(kind, vp, template, state)
        sol = solve_lp_relax(obj, costs, budget)
    else:
        obj = build_objective(kind, vp, template, state)
        method = METHOD_MU if args.strategy == "mu" else METHOD_COUNT
        sol = heuristic_plan(method, vp, history, costs, budget, obj)
    record = solution_record(sol, obj, budget)
    if sol.relaxed_objective is not None:
        record["relaxed_objective"] = sol.relaxed_objective
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(record, out / "plan.json")
    intervened = [int(i) for i in np.flatnonzero(sol.u == 0)]
    print(
        f"{args.strategy}: intervene at {len(intervened)} nodes, spend "
        f"{sol.spent:g} of {budget:g}, objective {sol.objective_value:.6g} "
        f"-> {out}/plan.json"
    )
    return 0


def _cmd_sweep(args) -> int:
    if args.config:
        with open(args.config) as fh:
            config = harness.SweepConfig.from_dict(json.load(fh))
    else:
        config = harness.SweepConfig(
            n=args.n,
            reps=args.reps,
            tau=args.tau,
            T=args.T,
            p_grid=tuple(_floats(args.p)),
            gamma_grid=tuple(_floats(args.gamma)),
            q_grid=tuple(_floats(args.q)),
            base_cost=args.base_cost,
            master_seed=args.seed,
            fixed_network=args.fixed_network,
            backend=args.backend,
        )
    result = harness.run_sweep(config)
    out = Path(args.out)
    written = harness.emit_report(result, out)
    _write_json(config.to_dict(), out / "sweep_config.json")
    print(f"sweep wrote {len(written) + 1} files to {out}" + (" (partial)" if result.partial else ""))
    return 0


def _cmd_la(args) -> int:
    config = EMConfig(max_iters=args.max_iters, tol=args.tol, init=EMInit(seed=args.seed))
    report = harness.run_la_pipeline(
        args.events,
        args.area_index,
        p=args.p,
        gamma=args.gamma,
        q_grid=tuple(_floats(args.q)),
        out_dir=args.out,
        em_config=config,
        base_cost=args.base_cost,
        horizon_factor=args.horizon_factor,
    )
    print(
        f"pipeline on {report.n_events} events (tau={report.tau:g}, T={report.T:g}, "
        f"branching ratio {report.branching_ratio:.3f}) -> {args.out}"
    )
    return 0


def _cmd_report(args) -> int:
    rows = []
    with open(args.input, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(
                harness.SweepCell(
                    row["strategy"],
                    float(row["p"]),
                    float(row["gamma"]),
                    float(row["q"]),
                    float(row["mean_rate_reduction_pct"]),
                    float(row["mean_event_reduction_pct"]),
                    float(row["stderr_rate"]),
                    float(row["stderr_events"]),
                )
            )
    result = harness.SweepResult(rows, harness.SweepConfig(reps=1))
    written = harness.emit_report(result, args.out)
    print(f"report wrote {len(written)} files to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sthawkes",
        description="Intervention planning for spatiotemporal self-exciting networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ing = sub.add_parser("ingest", help="raw CSV -> canonical events + area index")
    p_ing.add_argument("--in", dest="input", required=True)
    p_ing.add_argument("--out", required=True)
    p_ing.add_argument("--col-time", default="timestamp")
    p_ing.add_argument("--col-lat", default="lat")
    p_ing.add_argument("--col-lon", default="lon")
    p_ing.add_argument("--col-area", default="area")
    p_ing.add_argument("--col-type", default="type")
    p_ing.add_argument("--include-types", default=None, help="comma-separated include list")
    p_ing.set_defaults(func=_cmd_ingest)

    p_sim = sub.add_parser("simulate", help="generate one event trace")
    p_sim.add_argument("--params", required=True)
    p_sim.add_argument("--T", type=float, required=True)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--backend", choices=[BACKEND_BRANCHING, BACKEND_THINNING],
                       default=BACKEND_BRANCHING)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_fit = sub.add_parser("fit", help="EM fit on a canonical event CSV")
    p_fit.add_argument("--events", required=True)
    p_fit.add_argument("--n", type=int, default=None)
    p_fit.add_argument("--max-iters", type=int, default=200)
    p_fit.add_argument("--tol", type=float, default=1e-7)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--bandwidth-grid", default=None, help="comma-separated deltas")
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=_cmd_fit)

    p_plan = sub.add_parser("plan", help="one-shot intervention plan")
    p_plan.add_argument("--params", required=True)
    p_plan.add_argument("--events", required=True)
    p_plan.add_argument("--p", type=float, required=True)
    p_plan.add_argument("--gamma", type=float, required=True)
    p_plan.add_argument("--tau", type=float, default=None)
    p_plan.add_argument("--T", type=float, default=None)
    p_plan.add_argument("--budget", type=float, default=None)
    p_plan.add_argument("--q", type=float, default=None, help="budget as %% of total cost")
    p_plan.add_argument("--base-cost", type=float, default=1.0)
    p_plan.add_argument(
        "--strategy",
        choices=["exact-rate", "exact-invasion", "lp-relax", "mu", "count"],
        default="exact-rate",
    )
    p_plan.add_argument("--objective", choices=["rate", "invasion"], default="rate",
                        help="objective used by lp-relax and heuristic reporting")
    p_plan.add_argument("--out", required=True)
    p_plan.set_defaults(func=_cmd_plan)

    p_sweep = sub.add_parser("sweep", help="strategy-comparison experiment")
    p_sweep.add_argument("--config", default=None, help="JSON SweepConfig file")
    p_sweep.add_argument("--n", type=int, default=200)
    p_sweep.add_argument("--reps", type=int, default=100)
    p_sweep.add_argument("--tau", type=float, default=10.0)
    p_sweep.add_argument("--T", type=float, default=20.0)
    p_sweep.add_argument("--p", default="0.1,0.3")
    p_sweep.add_argument("--gamma", default="0.6,0.8,1.0")
    p_sweep.add_argument("--q", default="10,20,30,40,50,60,70,80,90")
    p_sweep.add_argument("--base-cost", type=float, default=1.0)
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--fixed-network", action="store_true")
    p_sweep.add_argument("--backend", choices=[BACKEND_BRANCHING, BACKEND_THINNING],
                         default=BACKEND_BRANCHING)
    p_sweep.add_argument("--out", required=True)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_la = sub.add_parser("la", help="fit + per-budget strategy tables")
    p_la.add_argument("--events", required=True)
    p_la.add_argument("--area-index", required=True)
    p_la.add_argument("--p", type=float, default=0.1)
    p_la.add_argument("--gamma", type=float, default=1.0)
    p_la.add_argument("--q", default="10,20,30,40,50,60,70,80,90")
    p_la.add_argument("--max-iters", type=int, default=200)
    p_la.add_argument("--tol", type=float, default=1e-7)
    p_la.add_argument("--seed", type=int, default=0)
    p_la.add_argument("--base-cost", type=float, default=1.0)
    p_la.add_argument("--horizon-factor", type=float, default=4.3)
    p_la.add_argument("--out", required=True)
    p_la.set_defaults(func=_cmd_la)

    p_rep = sub.add_parser("report", help="re-emit series/summary from sweep.csv")
    p_rep.add_argument("--in", dest="input", required=True)
    p_rep.add_argument("--out", required=True)
    p_rep.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
