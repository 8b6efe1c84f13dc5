"""Command-line driver: single solves, Monte Carlo sweeps, figure presets.

Exit codes: 0 on success, 2 on configuration errors, 3 when any solver
failed hard during a run.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bb import BBConfig, bb_solve
from .experiments import (
    SOLVER_NAMES,
    TWO_USER_ONLY,
    ConfigError,
    ExperimentSpec,
    fig_mode,
    run_experiment,
    solve_single,
    write_csv,
)
from .model import SystemInstance, oma_profile, total_power
from .sca import sca_solve
from .twouser import TwoUserInstance, grid_oracle_two_user, solve_two_user


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bacnoma", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument("--trials", type=int, default=None, help="trials per sweep point")
    common.add_argument("--out", type=Path, default=None, help="output CSV path")
    common.add_argument("--feas-mode", choices=("sra", "sca"), default=None)
    common.add_argument("--xi", type=float, default=None, help="relative bound gap for BB")
    common.add_argument("--nmax", type=int, default=None, help="BB iteration cap")
    common.add_argument("--jobs", type=int, default=None, help="parallel trial workers")
    common.add_argument("--no-plot", action="store_true", help="skip figure rendering")

    ps = sub.add_parser("solve", parents=[common], help="solve one instance from a file")
    ps.add_argument("--instance", type=Path, required=True)
    ps.add_argument("--solver", choices=[s for s in SOLVER_NAMES if s != "oma"] + ["oma"],
                    default="bb-sra")

    pw = sub.add_parser("sweep", parents=[common], help="run an experiment config file")
    pw.add_argument("--config", type=Path, required=True)

    pf = sub.add_parser("fig", parents=[common], help="run a figure preset")
    pf.add_argument("name", choices=[f"fig{i}" for i in range(1, 7)])
    pf.add_argument("--out-dir", type=Path, default=Path("."))

    po = sub.add_parser("oracle", parents=[common],
                        help="two-user grid oracle for fixture generation")
    po.add_argument("--instance", type=Path, default=None, help="two-user instance file")
    po.add_argument("--gamma0", type=float, default=None)
    po.add_argument("--gamma1", type=float, default=None)
    po.add_argument("--gamma2", type=float, default=None)
    po.add_argument("--rate", type=float, default=None)
    po.add_argument("--points", type=int, default=10_000_000, help="grid point budget")
    return p


def _apply_overrides(spec: ExperimentSpec, args) -> ExperimentSpec:
    kwargs = {}
    if args.seed is not None:
        kwargs["master_seed"] = args.seed
    if args.trials is not None:
        kwargs["trials"] = args.trials
    if args.feas_mode is not None:
        kwargs["feas_mode"] = args.feas_mode
    if args.xi is not None:
        kwargs["xi_rel"] = args.xi
    if args.nmax is not None:
        kwargs["n_max"] = args.nmax
    if args.jobs is not None:
        kwargs["jobs"] = args.jobs
    return replace(spec, **kwargs) if kwargs else spec


def _cmd_solve(args) -> int:
    inst = SystemInstance.from_text(args.instance.read_text())
    if args.solver in TWO_USER_ONLY and inst.num_users != 2:
        raise ConfigError(f"solver {args.solver!r} needs exactly 2 users, got {inst.num_users}")
    spec = ExperimentSpec(solvers=("oma",))  # carries BB/SCA knobs only
    spec = _apply_overrides(spec, args)
    if args.solver == "oma":
        prof = oma_profile(inst)
        print(f"solver=oma objective={total_power(prof):.10g}")
        out_profile = prof
    elif args.solver == "closed-form":
        rep = solve_two_user(TwoUserInstance.from_system(inst))
        print(f"solver=closed-form kind={rep.meta['label']} {rep.summary()}")
        out_profile = rep.profile
    elif args.solver == "sca":
        rep = sca_solve(inst)
        print(f"solver=sca {rep.summary()}")
        out_profile = rep.profile
    elif args.solver in ("bb-sra", "bb-sca"):
        oma_total = total_power(oma_profile(inst))
        cfg = BBConfig(xi=spec.xi_rel * oma_total, n_max=spec.n_max, feas_mode=args.solver[3:])
        rep = bb_solve(inst, cfg)
        print(f"solver={args.solver} {rep.summary()}")
        out_profile = rep.profile
    else:  # conventional
        rec = solve_single("conventional", inst, spec)
        print(f"solver=conventional objective={rec['power']:.10g}")
        out_profile = None
    if args.out is not None and out_profile is not None:
        args.out.write_text(out_profile.to_text())
    return 0


def _run_and_write(spec: ExperimentSpec, csv_path: Path, make_plot: bool) -> int:
    result = run_experiment(spec)
    write_csv(result, csv_path)
    print(f"wrote {csv_path}")
    if make_plot:
        from . import plots

        png = csv_path.with_suffix(".png")
        plots.render(result, png)
        print(f"wrote {png}")
    if result.any_failures:
        total = sum(result.failures.values())
        print(f"{total} solver failure(s); see log for details", file=sys.stderr)
        return 3
    return 0


def _cmd_sweep(args) -> int:
    spec = _apply_overrides(ExperimentSpec.from_text(args.config.read_text()), args)
    out = args.out if args.out is not None else Path("sweep.csv")
    return _run_and_write(spec, out, not args.no_plot)


def _cmd_fig(args) -> int:
    rc = 0
    for label, spec in fig_mode(args.name):
        spec = _apply_overrides(spec, args)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        rc = max(rc, _run_and_write(spec, args.out_dir / f"{label}.csv", not args.no_plot))
    return rc


def _cmd_oracle(args) -> int:
    if args.instance is not None:
        inst = TwoUserInstance.from_system(SystemInstance.from_text(args.instance.read_text()))
    else:
        missing = [k for k in ("gamma0", "gamma1", "gamma2", "rate") if getattr(args, k) is None]
        if missing:
            raise ConfigError(f"oracle needs --instance or all of --gamma0/1/2 --rate (missing {missing})")
        inst = TwoUserInstance(args.gamma0, args.gamma1, args.gamma2, args.rate)
    res = grid_oracle_two_user(inst, max_points=args.points)
    print(f"oracle objective={res.objective!r} p0={res.p0!r} p1={res.p1!r} p2={res.p2!r} "
          f"coarse_step={res.coarse_step!r} fine_step={res.fine_step!r}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "fig":
            return _cmd_fig(args)
        return _cmd_oracle(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver hard failure
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
