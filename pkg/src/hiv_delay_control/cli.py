#!/usr/bin/env python3
"""
Command-line front end

Reproduces the equilibrium, stability, simulation, optimal-control and
sensitivity results as CSV/JSON artifacts.

Usage examples:
    hiv-delay-control equilibria
    hiv-delay-control stability --config params.json
    hiv-delay-control simulate --horizon 500 --control off --paired
    hiv-delay-control simulate --case 1 --control bang:47.08 --compare-uncontrolled
    hiv-delay-control optimize --case 3 --w 5 --method iop
    hiv-delay-control optimize --cases 1,2,3 --weights 1,5 --workers 6
    hiv-delay-control sensitivity --case 1 --vary w,r,v

stdout carries the JSON documents or the paths of written files; diagnostics
go to stderr. Exit codes: 0 success, 2 configuration, 3 integration failure,
4 solver or minimum-principle failure, 1 anything else.
"""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from rich.console import Console
from rich.logging import RichHandler

from . import __version__
from .config import RunConfig, Scenario
from .dde_integrator import (
    BangBang,
    ControlSchedule,
    GridControl,
    default_step,
    first_local_maxima,
    integrate,
    uncontrolled,
)
from .errors import (
    ConfigError,
    EquilibriumAbsent,
    GridMismatch,
    HivDelayError,
    NoBracket,
    NonFiniteState,
    NotConverged,
    StepIncompatible,
)
from .export import dumps, read_csv, write_csv, write_json
from .model_core import equilibria
from .optimal_control import Optimum, sensitivities, solve_grid, solve_iop
from .stability import classify

logger = logging.getLogger("hiv_delay_control")

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3
EXIT_SOLVER = 4

_EXIT_CODES = (
    ((ConfigError, StepIncompatible, GridMismatch), EXIT_CONFIG),
    ((NonFiniteState,), EXIT_INTEGRATION),
    ((NoBracket, NotConverged, EquilibriumAbsent), EXIT_SOLVER),
)


def exit_code_for(error: BaseException) -> int:
    for types, code in _EXIT_CODES:
        if isinstance(error, types):
            return code
    return EXIT_OTHER


def setup_logging(level: str) -> None:
    handler = RichHandler(console=Console(stderr=True), show_path=False, markup=False)
    root = logging.getLogger("hiv_delay_control")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _tag(value: float) -> str:
    """Compact float for file names: 0.5 -> 0.5, 1.0 -> 1"""
    return f"{value:g}"


# {{{ commands


def cmd_equilibria(config: RunConfig, args: argparse.Namespace) -> int:
    found = equilibria(config.params)
    _emit(dumps(found.to_dict(config.params)))
    return EXIT_OK


def cmd_stability(config: RunConfig, args: argparse.Namespace) -> int:
    reports = classify(config.params)
    _emit(dumps([report.to_dict() for report in reports]))
    return EXIT_OK


def _parse_control(text: str, config: RunConfig) -> ControlSchedule:
    """off | bang:<t_s> | file:<csv with t and c columns>"""
    c_hist = config.init.c_hist
    if text == "off":
        return uncontrolled(config.init)
    kind, _, value = text.partition(":")
    if kind == "bang" and value:
        try:
            return BangBang(t_s=float(value), c_hist=c_hist)
        except ValueError:
            raise ConfigError(f"Bad switching time in --control {text!r}", key="control") from None
    if kind == "file" and value:
        path = Path(value)
        if not path.exists():
            raise ConfigError(f"Control file not found: {path}", key="control")
        frame = read_csv(path)
        if not {"t", "c"} <= set(frame.columns) or len(frame) < 2:
            raise ConfigError(f"Control file {path} needs columns t and c and two rows", key="control")
        t = frame["t"].to_numpy()
        step = float(t[1] - t[0])
        if not np.allclose(np.diff(t), step, rtol=0.0, atol=1e-9 * max(1.0, abs(t[-1]))):
            raise ConfigError(f"Control file {path} is not on a uniform grid", key="control")
        return GridControl(frame["c"].to_numpy(), step, c_hist)
    raise ConfigError(f"--control must be off, bang:<t_s> or file:<path>, got {text!r}", key="control")


def _simulate_one(config: RunConfig, control: ControlSchedule, horizon: float | None, params=None):
    params = params or config.params
    step = control.step if isinstance(control, GridControl) else default_step(params)
    return integrate(
        params,
        config.init,
        control,
        step=step,
        horizon=horizon,
        refine_switch=isinstance(control, BangBang),
    )


def cmd_simulate(config: RunConfig, args: argparse.Namespace) -> int:
    control = _parse_control(args.control, config)
    label = config.case_label
    out = config.out_dir
    written = []

    if args.paired:
        summary = {}
        for tau in (0.0, config.params.tau):
            params = config.params.with_value("tau", tau)
            traj = _simulate_one(config, control, args.horizon, params)
            written.append(write_csv(traj.to_frame(), out / f"trajectory_{label}_tau{_tag(tau)}.csv"))
            peaks = first_local_maxima(traj)
            summary[f"tau={_tag(tau)}"] = {
                name: None if peak is None else {"t": peak[0], "value": peak[1]}
                for name, peak in peaks.items()
            }
        written.append(write_json(summary, out / f"first_maxima_{label}.json"))
    else:
        traj = _simulate_one(config, control, args.horizon)
        written.append(write_csv(traj.to_frame(), out / f"trajectory_{label}.csv"))
        if args.compare_uncontrolled:
            if not isinstance(control, BangBang) or control.t_s == 0.0:
                logger.warning("⚠️  --compare-uncontrolled has no effect without a treatment schedule")
            else:
                base = _simulate_one(config, uncontrolled(config.init), args.horizon)
                written.append(write_csv(base.to_frame(), out / f"trajectory_{label}_uncontrolled.csv"))

    for path in written:
        _emit(str(path))
    return EXIT_OK


def _optimize_one(config: RunConfig, method: str) -> Optimum:
    if method == "grid":
        _, optimum = solve_grid(config.params, config.grid_n, config.init, case=config.case_label)
        return optimum
    return solve_iop(config.params, config.init, with_second_derivative=True, case=config.case_label)


def _optimize_job(job: tuple[RunConfig, str]) -> Optimum:
    return _optimize_one(*job)


def _write_optimum(optimum: Optimum, out: Path) -> list[Path]:
    stem = f"{optimum.case}_w{_tag(optimum.w)}_{optimum.method}"
    paths = [write_json(optimum.to_dict(), out / f"optimum_{stem}.json")]
    if optimum.phi is not None and optimum.control is not None:
        paths.append(write_csv(optimum.phi.to_frame(optimum.control), out / f"switching_{stem}.csv"))
    return paths


def _csv_floats(text: str, name: str) -> list[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise ConfigError(f"--{name} must be a comma-separated list of numbers, got {text!r}", key=name) from None


def cmd_optimize(config: RunConfig, args: argparse.Namespace) -> int:
    configs = [config]
    if args.cases or args.weights:
        scenarios = [Scenario.from_flag(c) for c in args.cases.split(",")] if args.cases else [config.scenario]
        weights = _csv_floats(args.weights, "weights") if args.weights else [config.params.w]
        configs = [
            config.with_scenario(scenario).with_params(w=w) for scenario in scenarios for w in weights
        ]

    jobs = [(run, args.method) for run in configs]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            optima = list(pool.map(_optimize_job, jobs))
    else:
        optima = [_optimize_job(job) for job in jobs]

    code = EXIT_OK
    for optimum in optima:
        for path in _write_optimum(optimum, config.out_dir):
            _emit(str(path))
        if optimum.pmp is not None and optimum.pmp.violations:
            logger.error(
                f"❌ {optimum.case} w={optimum.w}: {optimum.pmp.violations} control-law violations"
            )
            code = EXIT_SOLVER
        if optimum.status != "optimal":
            logger.error(f"❌ {optimum.case} w={optimum.w}: solver status {optimum.status}")
            code = EXIT_SOLVER
    return code


def cmd_sensitivity(config: RunConfig, args: argparse.Namespace) -> int:
    targets = [name.strip() for name in args.vary.split(",") if name.strip()]
    if not targets:
        raise ConfigError("--vary needs at least one parameter name", key="vary")
    fixed = uncontrolled(config.init) if args.fixed_control == "off" else None
    table = sensitivities(
        config.params,
        targets,
        config.init,
        rel_step=args.rel_step,
        workers=config.workers,
        fixed_control=fixed,
    )
    path = config.out_dir / f"sensitivity_{config.case_label}_w{_tag(config.params.w)}.csv"
    write_csv(table.frame, path, index=True)
    _emit(str(path))
    return EXIT_OK


COMMANDS = {
    "equilibria": cmd_equilibria,
    "stability": cmd_stability,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "sensitivity": cmd_sensitivity,
}


# }}}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON parameter document")
    common.add_argument("--out", help="Output directory (default: current directory)")
    common.add_argument("--case", choices=["1", "2", "3"], help="Delay preset: 1 (0,0), 2 (0.5,0), 3 (0.5,0.2)")
    common.add_argument("--w", type=float, help="Control weight in the cost")
    common.add_argument("--tau", type=float, help="Intracellular delay")
    common.add_argument("--xi", type=float, help="Pharmacological delay")
    common.add_argument("--grid-n", type=int, help="Grid size N for the grid solver")
    common.add_argument("--workers", type=int, help="Process-pool size for independent runs")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING (default), ERROR")

    parser = argparse.ArgumentParser(
        prog="hiv-delay-control",
        description="Delayed HIV-1 model: equilibria, stability, simulation and optimal treatment",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("equilibria", parents=[common], help="Thresholds and equilibria as JSON")
    sub.add_parser("stability", parents=[common], help="Stability verdicts as JSON")

    simulate = sub.add_parser("simulate", parents=[common], help="Write a trajectory CSV")
    simulate.add_argument("--horizon", type=float, help="Final time (default t_f)")
    simulate.add_argument("--control", default="off", help="off | bang:<t_s> | file:<csv>")
    simulate.add_argument("--paired", action="store_true", help="Also run with tau = 0")
    simulate.add_argument(
        "--compare-uncontrolled", action="store_true", help="Also write the untreated trajectory"
    )

    optimize = sub.add_parser("optimize", parents=[common], help="Optimal treatment and PMP check")
    optimize.add_argument("--method", choices=["iop", "grid"], default="iop")
    optimize.add_argument("--cases", help="Comma-separated cases to sweep, e.g. 1,2,3")
    optimize.add_argument("--weights", help="Comma-separated weights to sweep, e.g. 1,5")

    sensitivity = sub.add_parser("sensitivity", parents=[common], help="Parameter sensitivity CSV")
    sensitivity.add_argument("--vary", default="w,r,v", help="Comma-separated parameter names")
    sensitivity.add_argument("--rel-step", type=float, default=1e-3)
    sensitivity.add_argument(
        "--fixed-control",
        choices=["optimal", "off"],
        default="optimal",
        help="Re-optimize the switch (optimal) or hold c = 0 (off)",
    )
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    overrides = {key: getattr(args, key) for key in ("w", "tau", "xi") if getattr(args, key) is not None}
    return RunConfig.load(
        config_path=args.config,
        case=args.case,
        param_overrides=overrides,
        out_dir=args.out,
        grid_n=args.grid_n,
        workers=args.workers,
        log_level=args.log_level,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging("WARNING")
    try:
        config = load_config(args)
        setup_logging(config.log_level)
        return COMMANDS[args.command](config, args)
    except HivDelayError as e:
        code = exit_code_for(e)
        logger.error(f"❌ {type(e).__name__}: {e}")
        return code
    except Exception as e:
        logger.exception(f"❌ Unexpected failure: {e}")
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
