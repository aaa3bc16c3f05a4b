"""Command-line interface: dfs / simulate / analytic / compare.

Exit codes: 0 success, 2 model or configuration error, 3 numerical failure
(divergence, censoring overflow, truncation), 4 acceptance-gate failure in
``compare``.  All floats in CSV/JSON outputs carry 17 significant digits and
every output embeds the resolved configuration, so a command can be re-run
bit-identically from its own artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analytic
from .errors import ModelError, QfptError
from .models import ModelSpec
from .sme import IntegratorConfig, resolve_workers, simulate_ensemble, simulate_trajectory
from .stats import HittingRecord, ks_one_sample, summarize
from .subspaces import build_partition, find_dfs
from .linalg import sigma_z, site_operator

EXIT_OK = 0
EXIT_MODEL = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4


def _fmt(v):
    return f"{float(v):.17g}"


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) if isinstance(c, (int, bool)) else _fmt(c) for c in row) + "\n")


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _resolved_run(args):
    """Merge config file and flags (flags win) into a resolved run dict."""
    cfg = _load_config(args.config)
    model_cfg = dict(cfg.get("model", {}))
    if args.model is not None:
        model_cfg["kind"] = args.model
    if args.x0 is not None:
        model_cfg["x0"] = args.x0
    if args.zeta is not None:
        model_cfg["zeta"] = args.zeta

    def pick(flag, key, default):
        return flag if flag is not None else cfg.get(key, default)

    run = {
        "model": model_cfg or {"kind": "qnd2"},
        "epsilon": float(pick(args.epsilon, "epsilon", 0.003)),
        "dt": float(pick(args.dt, "dt", 1e-3)),
        "t_max": pick(args.tmax, "t_max", None),
        "n_traj": int(pick(args.ntraj, "n_traj", 1000)),
        "seed": int(pick(args.seed, "seed", 1)),
        "out": str(pick(args.out, "out", "qfpt-out")),
        "threads": pick(args.threads, "threads", None),
    }
    if run["t_max"] is not None:
        run["t_max"] = float(run["t_max"])
    return run, cfg


def _build_system(run):
    spec = ModelSpec.from_dict(run["model"])
    model = spec.build()
    psi0 = spec.initial_state()
    dfs = find_dfs(model)
    if len(dfs) < 2:
        raise ModelError(f"model has {len(dfs)} decoherence-free subspace(s); need at least 2 to bipartition")
    partition = build_partition(model, dfs, select=((0,), (1,)))
    return spec, model, psi0, dfs, partition


def _integrator(run):
    return IntegratorConfig(dt=run["dt"], t_max=run["t_max"], seed=run["seed"])


# --- dfs ---------------------------------------------------------------------


def cmd_dfs(args):
    run, _ = _resolved_run(args)
    spec, model, _, dfs, partition = _build_system(run)
    print(f"model: {spec.kind} (dim {model.dim})")
    print(f"channels: {model.n_channels}  efficiencies: {[_fmt(z) for z in model.zetas]}")
    print(f"decoherence-free subspaces: {len(dfs)}")
    for i, sub in enumerate(dfs):
        cs = ", ".join(f"c[{k}]={_fmt(c.real)}{c.imag:+.17g}j" for k, c in enumerate(sub.c_values))
        print(f"subspace {i}: dim {sub.dim}  {cs}")
        for j in range(sub.dim):
            v = sub.basis[:, j]
            nz = [(idx, z) for idx, z in enumerate(v) if abs(z) > 1e-12]
            amps = "  ".join(f"[{idx}] {_fmt(z.real)}{z.imag:+.17g}j" for idx, z in nz)
            print(f"  vector {j}: {amps}")
    print(f"partition Q1=(0) Q2=(1): gamma = {_fmt(partition.gamma)}  closed = {partition.closed}")
    for k in range(model.n_channels):
        c1, c2 = partition.c[k]
        print(f"  channel {k}: c1 = {_fmt(c1.real)}{c1.imag:+.17g}j  c2 = {_fmt(c2.real)}{c2.imag:+.17g}j")
    return EXIT_OK


# --- simulate ------------------------------------------------------------------


def _records_rows(records):
    return [(r.trajectory_id, r.side, r.hit_time, int(r.censored)) for r in records]


def _magnetization_observables(dim):
    n_sites = int(round(np.log2(dim)))
    if 2**n_sites != dim:
        return {}
    return {f"sz{i}": site_operator(sigma_z, i, n_sites) for i in range(n_sites)}


def cmd_simulate(args):
    run, _ = _resolved_run(args)
    _, model, psi0, _, partition = _build_system(run)
    cfg = _integrator(run)
    out = Path(run["out"])
    workers = resolve_workers(run["threads"])

    records = simulate_ensemble(
        model, partition, psi0, cfg, run["epsilon"], run["n_traj"], n_workers=workers
    )
    _write_csv(out / "hits.csv", ["trajectory_id", "side", "hit_time", "censored"], _records_rows(records))

    if args.trace:
        _, trace = simulate_trajectory(
            model,
            partition,
            psi0,
            cfg,
            run["epsilon"],
            record=True,
            observables=_magnetization_observables(model.dim),
        )
        names = sorted(trace.observables)
        rows = [
            (t, x) + tuple(trace.observables[n][i] for n in names)
            for i, (t, x) in enumerate(zip(trace.times, trace.x))
        ]
        _write_csv(out / "trace_0.csv", ["t", "x"] + names, rows)

    payload = {"config_echo": run, "gamma": partition.gamma, "n": len(records)}
    try:
        if len(records) >= 2:
            payload.update(summarize(records).to_dict())
    except QfptError as exc:
        payload["error"] = str(exc)
        payload["partial"] = True
        _write_json(out / "summary.json", payload)
        print(f"simulate: censoring failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _write_json(out / "summary.json", payload)
    print(f"simulate: wrote {out / 'hits.csv'} ({len(records)} records)")
    return EXIT_OK


# --- analytic -------------------------------------------------------------------


def cmd_analytic(args):
    run, cfg_file = _resolved_run(args)
    acfg = dict(cfg_file.get("analytic", {}))
    epsilon = run["epsilon"]
    if args.gamma is not None:
        gamma = float(args.gamma)
        x0 = float(run["model"].get("x0", 0.1))
    else:
        _, _, _, _, partition = _build_system(run)
        gamma = partition.gamma
        x0 = float(run["model"].get("x0", 0.1))
    params = analytic.DiffusionParams(gamma=gamma, epsilon=epsilon, x0=x0)
    sol = analytic.SpectralSolution(params)
    out = Path(run["out"])

    tau_points = int(args.tau_points if args.tau_points is not None else acfg.get("tau_points", 400))
    tau_max = args.tau_max if args.tau_max is not None else acfg.get("tau_max")
    if tau_max is None:
        tau_max = 5.0 * analytic.mean_fpt(analytic.DiffusionParams(gamma, epsilon, 0.5))
    taus = np.linspace(sol.t_min_fpt, float(tau_max), tau_points)
    f1 = np.clip(analytic.fpt_density(taus, sol, "upper"), 0.0, None)
    f2 = np.clip(analytic.fpt_density(taus, sol, "lower"), 0.0, None)
    fb = np.clip(analytic.fpt_density(taus, sol, "both"), 0.0, None)
    _write_csv(out / "fpt_grid.csv", ["tau", "f1", "f2", "f"], list(zip(taus, f1, f2, fb)))

    x0_points = int(args.x0_points if args.x0_points is not None else acfg.get("x0_points", 99))
    xs = np.linspace(epsilon, 1.0 - epsilon, x0_points)
    xs = np.unique(np.append(xs, x0))  # the run's own start is always on the grid
    rows = []
    for x in xs:
        p = analytic.DiffusionParams(gamma, epsilon, float(x))
        rows.append((x, analytic.mean_fpt(p), analytic.variance_fpt(p)))
    _write_csv(out / "moments.csv", ["x0", "mean", "variance"], rows)

    _write_json(
        out / "params.json",
        {
            "config_echo": run,
            "gamma": gamma,
            "epsilon": epsilon,
            "x0": x0,
            "n_max": sol.n_max,
            "tail_tol": sol.tail_tol,
            "t_min_fpt": sol.t_min_fpt,
            "mean": analytic.mean_fpt(params),
            "variance": analytic.variance_fpt(params),
            "splitting_upper": analytic.splitting_upper(params),
        },
    )
    print(f"analytic: wrote {out / 'fpt_grid.csv'} and {out / 'moments.csv'}")
    return EXIT_OK


# --- compare --------------------------------------------------------------------


def cmd_compare(args):
    run, cfg_file = _resolved_run(args)
    ccfg = dict(cfg_file.get("compare", {}))
    ks_threshold = float(args.ks_threshold if args.ks_threshold is not None else ccfg.get("ks_threshold", 0.02))
    mean_sigmas = float(args.mean_sigmas if args.mean_sigmas is not None else ccfg.get("mean_sigmas", 3.0))
    variance_rel = float(args.variance_rel if args.variance_rel is not None else ccfg.get("variance_rel", 0.05))
    gamma_scale = float(args.gamma_scale if args.gamma_scale is not None else ccfg.get("gamma_scale", 1.0))
    self_test = bool(args.self_test or ccfg.get("self_test", False))

    _, model, psi0, _, partition = _build_system(run)
    epsilon = run["epsilon"]
    x0 = float(run["model"].get("x0", 0.1))
    cfg = _integrator(run)
    out = Path(run["out"])

    true_params = analytic.DiffusionParams(partition.gamma, epsilon, x0)
    cmp_params = analytic.DiffusionParams(partition.gamma * gamma_scale, epsilon, x0)
    cmp_sol = analytic.SpectralSolution(cmp_params)

    if self_test:
        rng = np.random.default_rng(run["seed"])
        sides, times = analytic.sample_exit_times(analytic.SpectralSolution(true_params), run["n_traj"], rng)
        records = [
            HittingRecord(trajectory_id=i, side=int(s), hit_time=float(t))
            for i, (s, t) in enumerate(zip(sides, times))
        ]
    else:
        records = simulate_ensemble(
            model, partition, psi0, cfg, epsilon, run["n_traj"], n_workers=resolve_workers(run["threads"])
        )

    summary = summarize(records)
    live = [r for r in records if not r.censored]
    ks_up = ks_one_sample(live, 1, cmp_sol)
    ks_lo = ks_one_sample(live, 2, cmp_sol)
    ks_both = ks_one_sample(live, "both", cmp_sol)

    mean_ref = analytic.mean_fpt(cmp_params)
    var_ref = analytic.variance_fpt(cmp_params)
    split_ref = analytic.splitting_upper(cmp_params)
    mean_delta_se = abs(summary.mean - mean_ref) / summary.mean_se
    var_delta_rel = abs(summary.variance - var_ref) / var_ref
    split_delta_se = abs(summary.splitting_upper - split_ref) / max(summary.splitting_se, 1e-300)

    gates = {
        "ks_upper": ks_up.statistic < ks_threshold,
        "ks_lower": ks_lo.statistic < ks_threshold,
        "mean": mean_delta_se <= mean_sigmas,
        "variance": var_delta_rel <= variance_rel,
        "splitting": split_delta_se <= mean_sigmas,
    }
    passed = all(gates.values())

    report = {
        "config_echo": run,
        "thresholds": {
            "ks_threshold": ks_threshold,
            "mean_sigmas": mean_sigmas,
            "variance_rel": variance_rel,
            "gamma_scale": gamma_scale,
            "self_test": self_test,
        },
        "n": summary.n,
        "mean": summary.mean,
        "mean_se": summary.mean_se,
        "variance": summary.variance,
        "variance_se": summary.variance_se,
        "splitting_upper": summary.splitting_upper,
        "censored_fraction": summary.censored_fraction,
        "ks_upper": ks_up.statistic,
        "ks_lower": ks_lo.statistic,
        "ks_both": ks_both.statistic,
        "analytic": {"mean": mean_ref, "variance": var_ref, "splitting_upper": split_ref},
        "deltas": {
            "mean_se_units": mean_delta_se,
            "variance_rel": var_delta_rel,
            "splitting_se_units": split_delta_se,
        },
        "gates": gates,
        "passed": passed,
    }
    _write_json(out / "compare.json", report)
    for name, ok in gates.items():
        print(f"compare gate {name}: {'pass' if ok else 'FAIL'}")
    if not passed:
        print("compare: acceptance thresholds violated", file=sys.stderr)
        return EXIT_ACCEPTANCE
    print(f"compare: all gates passed; report at {out / 'compare.json'}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", type=str, default=None, help="JSON config file; flags override it")
    p.add_argument("--model", choices=["qnd2", "ring5", "custom"], default=None)
    p.add_argument("--x0", type=float, default=None, help="initial overlap with Q1")
    p.add_argument("--epsilon", type=float, default=None, help="threshold defect (default 0.003)")
    p.add_argument("--dt", type=float, default=None, help="integrator step (default 1e-3)")
    p.add_argument("--tmax", type=float, default=None, help="censoring horizon (default 50x mean)")
    p.add_argument("--ntraj", type=int, default=None, help="ensemble size")
    p.add_argument("--seed", type=int, default=None, help="master seed (default 1)")
    p.add_argument("--zeta", type=float, default=None, help="detector efficiency in [0, 1]")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker cap (QFPT_THREADS as fallback)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qfpt",
        description="First-passage statistics of monitored quantum systems into decoherence-free subspaces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dfs", help="detect decoherence-free subspaces and report the partition")
    _add_common(p)
    p.set_defaults(func=cmd_dfs)

    p = sub.add_parser("simulate", help="run a trajectory ensemble and write hitting records")
    _add_common(p)
    p.add_argument("--trace", action="store_true", help="also dump the per-step trace of trajectory 0")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analytic", help="evaluate the closed-form exit-time laws on grids")
    _add_common(p)
    p.add_argument("--gamma", type=float, default=None, help="noise strength (skips model detection)")
    p.add_argument("--tau-max", dest="tau_max", type=float, default=None)
    p.add_argument("--tau-points", dest="tau_points", type=int, default=None)
    p.add_argument("--x0-points", dest="x0_points", type=int, default=None)
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("compare", help="cross-validate ensemble against the analytic laws")
    _add_common(p)
    p.add_argument("--ks-threshold", dest="ks_threshold", type=float, default=None)
    p.add_argument("--mean-sigmas", dest="mean_sigmas", type=float, default=None)
    p.add_argument("--variance-rel", dest="variance_rel", type=float, default=None)
    p.add_argument(
        "--gamma-scale",
        dest="gamma_scale",
        type=float,
        default=None,
        help="perturb the analytic gamma (negative-control knob; 1.0 = honest comparison)",
    )
    p.add_argument("--self-test", dest="self_test", action="store_true",
                   help="sample records from the analytic law instead of simulating")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ModelError as exc:
        print(f"model/config error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except QfptError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"model/config error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
