"""``gradplast run|converge|korn|validate-flow --config <path> --out <dir> [--strict] [--seed N]``.

Exit status: 0 on success, 1 on usage/config/I-O errors, 2 when a strict
check failed, 3 when the nonlinear solver gave up.
"""
import argparse
import os
import sys

EXIT_OK, EXIT_USAGE, EXIT_STRICT, EXIT_SOLVER = 0, 1, 2, 3

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


def thread_cap():
    """Worker cap from ``GRADPLAST_THREADS`` (default 1)."""
    raw = os.environ.get("GRADPLAST_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise SystemExit(f"GRADPLAST_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise SystemExit("GRADPLAST_THREADS must be >= 1")
    return n


def _apply_thread_cap(n):
    # must run before numpy/numba load their thread pools
    for var in _THREAD_VARS:
        os.environ.setdefault(var, str(n))


def _log(msg):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def command_run(cfg, out, strict, seed):
    import numpy as np

    from . import io
    from .diagnostics import LEDGER_COLUMNS, EnergyLedger
    from .elasticity import ConvergenceError
    from .flow_rules import check_monotonicity
    from .grid import B, tr
    from .rothe import IncompatibleInitialState, Model, run

    scenario = cfg.scenario()
    rc = cfg.rothe()
    opts = cfg.section("run")
    if strict:
        mono = check_monotonicity(scenario.rule, cfg["validate", "monotone_pairs"], seed=seed)
        if not mono.passed:
            io.write_json(os.path.join(out, "report.json"),
                          {"status": "rejected", "reason": "flow rule not monotone",
                           "monotonicity": mono.__dict__})
            _log(f"strict: {mono.summary()}; witness {mono.witnesses[:1]}")
            return EXIT_STRICT

    model = Model(scenario, rc.eps_reg, rc.inner_tol, rc.cg_max)
    ledger = {}

    class LedgerViolation(Exception):
        pass

    def on_step(traj, n):
        if "led" not in ledger:
            ledger["led"] = EnergyLedger(model, traj)
        row = ledger["led"].step(n)
        every = opts["snapshot_every"]
        if every and n % every == 0:
            io.write_state_csv(os.path.join(out, f"z_{n:05d}.csv"), scenario.grid, traj.z[n])
        if strict and not row["pass"]:
            raise LedgerViolation(n)

    status, failure = EXIT_OK, None
    try:
        traj = run(rc, scenario, model=model, on_step=on_step,
                   allow_incompatible=opts["allow_incompatible"])
    except IncompatibleInitialState as err:
        _log(str(err))
        io.write_json(os.path.join(out, "report.json"), {"status": "rejected", "reason": str(err)})
        return EXIT_STRICT
    except ConvergenceError as err:
        _log(f"solver failure: {err}")
        io.write_json(os.path.join(out, "report.json"), {"status": "solver_failure",
                                                          "reason": str(err)})
        return EXIT_SOLVER
    except LedgerViolation as err:
        failure = int(err.args[0])
        status = EXIT_STRICT
        traj = None

    led = ledger.get("led")
    rows = led.rows if led else []
    io.write_rows(os.path.join(out, "ledger.csv"), LEDGER_COLUMNS, rows)
    if traj is None:
        io.write_json(os.path.join(out, "report.json"),
                      {"status": "ledger_violation", "step": failure, "row": rows[-1],
                       "tolerance": led.tol})
        _log(f"strict: energy ledger violated at step {failure}")
        return status

    steps = []
    for n in range(traj.n_steps + 1):
        z = traj.z[n]
        info = traj.info[n]
        steps.append([n, traj.times[n], info.iterations if info else 0,
                      info.residual if info else 0.0, model.norm(z),
                      float(np.abs(tr(B(z))).max()), float(np.abs(z).max())])
    io.write_rows(os.path.join(out, "steps.csv"),
                  ["step", "time", "iterations", "residual", "z_norm", "max_abs_trace_p",
                   "max_abs_z"], steps)
    g = scenario.grid
    io.write_state_csv(os.path.join(out, "z_final.csv"), g, traj.z[-1])
    io.write_field_csv(os.path.join(out, "sigma_final.csv"), g, traj.sigma[-1])
    if opts["vtk"]:
        io.write_vtk(os.path.join(out, "final.vtk"), g,
                     {"p": B(traj.z[-1]), "gamma": traj.z[-1][:, 9], "sigma": traj.sigma[-1],
                      "u": traj.u[-1]})
    fails = led.failures() if led else []
    summary = {
        "status": "ok",
        "steps": traj.n_steps,
        "h": traj.h,
        "z_identically_zero": not np.any(np.stack(traj.z)),
        "z_final_norm": model.norm(traj.z[-1]),
        "max_abs_trace_p": max(r[5] for r in steps),
        "total_iterations": sum(r[2] for r in steps),
        "ledger_failures": fails,
        "ledger_tolerance": led.tol if led else None,
        "cumulative_dissipation": rows[-1]["eq9_cum_dissipation"] if rows else 0.0,
        "rule": {"name": scenario.rule.name, **scenario.rule.params()},
    }
    io.write_json(os.path.join(out, "summary.json"), summary)
    _log(f"run: {traj.n_steps} steps, |z(T)| = {summary['z_final_norm']:.6e}, "
         f"ledger failures: {len(fails)}")
    return EXIT_STRICT if (strict and fails) else EXIT_OK


def command_converge(cfg, out, strict, seed):
    from . import io
    from .diagnostics import convergence_study

    scenario = cfg.scenario()
    rc = cfg.rothe()
    c = cfg.section("converge")
    table = convergence_study(rc, scenario, c["levels"], c["eps_sweep"], workers=thread_cap())
    rows = []
    for k, lev in enumerate(table.levels[:-1]):
        ratio = table.ratios[k - 1] if k >= 1 else float("nan")
        rows.append([lev, rc.t_end / 2 ** lev, table.differences[k], ratio])
    io.write_rows(os.path.join(out, "converge.csv"),
                  ["level", "h", "diff_to_next_level", "ratio_to_previous"], rows)
    erows = [[table.eps_values[k], table.eps_values[k + 1], d]
             for k, d in enumerate(table.eps_differences)]
    io.write_rows(os.path.join(out, "eps_sweep.csv"), ["eps_reg", "eps_reg_next", "diff"], erows)
    io.write_json(os.path.join(out, "summary.json"), table.__dict__ | {"passed": table.passed})
    _log(f"converge: differences {table.differences}, eps sweep {table.eps_differences}")
    return EXIT_STRICT if (strict and not table.passed) else EXIT_OK


def command_korn(cfg, out, strict, seed):
    from . import io
    from .diagnostics import korn_probe

    k = cfg.section("korn")
    reports = [korn_probe(cfg.grid(n), k["samples"], k["ascent"], k["ascent_iters"], seed=seed)
               for n in k["grids"]]
    fams = sorted({f for r in reports for f in r.max_by_family})
    rows = [[r.grid_dims[0], r.n_random, r.n_ascent, r.max_ratio, r.mean_ratio, r.degenerate,
             r.ascent_rayleigh_min] + [r.max_by_family.get(f, float("nan")) for f in fams]
            for r in reports]
    io.write_rows(os.path.join(out, "korn.csv"),
                  ["n", "random_samples", "ascent_samples", "eq11_max_ratio", "eq11_mean_ratio",
                   "degenerate", "min_rayleigh"] + [f"eq11_max_{f}" for f in fams], rows)
    maxima = [r.max_ratio for r in reports]
    spread = max(maxima) / min(maxima)
    ok = all(r.passed for r in reports) and spread <= 2.0
    io.write_json(os.path.join(out, "summary.json"),
                  {"maxima": maxima, "spread": spread, "passed": ok,
                   "degenerate": [r.degenerate for r in reports]})
    _log(f"korn: maxima {maxima}, spread {spread:.3f}")
    return EXIT_STRICT if (strict and not ok) else EXIT_OK


def command_validate_flow(cfg, out, strict, seed):
    from . import io
    from .flow_rules import (GrowthCertificate, check_growth, check_initial_compatibility,
                             check_monotonicity, check_self_controlling)
    from .rothe import Model

    scenario = cfg.scenario()
    rule = scenario.rule
    v = cfg.section("validate")
    reports = [check_monotonicity(rule, v["monotone_pairs"], seed=seed)]
    if rule.has_potential and rule.kappa == 0:
        cert = GrowthCertificate.for_norton_hoff(rule)
        reports.append(check_growth(rule, cert, v["growth_samples"], seed=seed))
    reports.append(check_self_controlling(rule, scenario.hardening, scenario.grid,
                                          v["self_control_samples"], seed=seed))
    model = Model(scenario, tol_cg=1e-11)
    _, s1 = model.unit_response()
    sig0 = float(scenario.load_factor(0.0)) * s1
    compatible = check_initial_compatibility(rule, sig0)
    rows = [[r.name, r.passed, r.n_samples, r.worst_slack] for r in reports]
    rows.append(["initial_compatibility", compatible, scenario.grid.n_nodes, float("nan")])
    io.write_rows(os.path.join(out, "flow_checks.csv"),
                  ["check", "passed", "samples", "worst_slack"], rows)
    io.write_json(os.path.join(out, "flow_report.json"),
                  {"rule": {"name": rule.name, **rule.params()},
                   "checks": [r.__dict__ for r in reports],
                   "initial_compatibility": compatible})
    for r in reports:
        _log(r.summary())
    hard = [r for r in reports if r.name in ("monotonicity", "growth")]
    ok = all(r.passed for r in hard) and compatible
    return EXIT_STRICT if (strict and not ok) else EXIT_OK


COMMANDS = {
    "run": command_run,
    "converge": command_converge,
    "korn": command_korn,
    "validate-flow": command_validate_flow,
}


def build_parser():
    p = argparse.ArgumentParser(prog="gradplast", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="scenario config (INI)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--strict", action="store_true", help="fail on any violated check")
    p.add_argument("--seed", type=int, default=None, help="override [run] seed")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    _apply_thread_cap(thread_cap())

    from .config import ConfigError, emit_config, load_config
    from .io import ensure_dir

    try:
        cfg = load_config(args.config)
    except (OSError, ConfigError) as err:
        _log(f"config error: {err}")
        return EXIT_USAGE
    seed = cfg["run", "seed"] if args.seed is None else args.seed
    strict = args.strict or cfg["run", "strict"]
    cfg = cfg.replace("run", seed=seed, strict=strict)
    try:
        ensure_dir(args.out)
        with open(os.path.join(args.out, "config.ini"), "w", encoding="utf-8") as fh:
            fh.write(emit_config(cfg))
    except OSError as err:
        _log(f"cannot write to {args.out}: {err}")
        return EXIT_USAGE
    return COMMANDS[args.command](cfg, args.out, strict, seed)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
