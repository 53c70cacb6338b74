"""Command-line front end.

Every subcommand reads one configuration file and writes one output file;
results depend only on the configuration and ``--seed``.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .calibration import CalibrationError, run_direct_calibration, run_echoed_calibration
from .config import build, load_config, section
from .dynamics import ControlModelParams, DeviceParams, Frame, PropagationError
from .effective import BranchError, methods_device
from .experiments import (
    AMPLIFY_COLUMNS,
    GRID_COLUMNS,
    ROBUST_COLUMNS,
    SCAN_COLUMNS,
    AmplificationConfig,
    DT_CONTROL,
    ConfigError,
    ControlPulse,
    RobustnessConfig,
    SweepConfig,
    amplification_experiment,
    fidelity_grid,
    robustness_map,
    transition_error_scan,
    write_rows,
)
from .pulseshape import PulseError, write_envelope_csv
from .schedule import DeviceContext, PulseSchedule
from .tomography import FitError, hamiltonian_tomography, write_datasets_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

DEFAULT_OUT = {
    "pulse": "envelope.csv",
    "scan": "scan.csv",
    "amplify": "amplify.csv",
    "grid": "grid.csv",
    "robust": "robust.csv",
    "tomo": "tomo.json",
    "calibrate": "calibration.json",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; 2 is reserved for numerical failures
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML or JSON configuration file")
    common.add_argument("--out", type=Path, help="output file")
    common.add_argument("--seed", type=int, default=None, help="root random seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--frame", choices=("rwa", "full", "lab"), default="rwa",
                        help="propagation frame for Transmon-device simulations")

    p = _Parser(prog="crdrag", description="Recursive DRAG cross-resonance toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    sub.add_parser("pulse", parents=[common], help="synthesize a control-model pulse and export its envelope")
    sub.add_parser("scan", parents=[common], help="transition-error scan over detuning")
    sub.add_parser("amplify", parents=[common], help="error-amplification phase sweep")
    sub.add_parser("grid", parents=[common], help="ZX gate infidelity grid")
    sub.add_parser("robust", parents=[common], help="robustness to amplitude and frequency drift")
    sub.add_parser("tomo", parents=[common], help="simulated Hamiltonian tomography")
    cal = sub.add_parser("calibrate", parents=[common], help="closed-loop gate calibration")
    cal.add_argument("kind", choices=("echoed", "direct"))
    return p


# ---------------------------------------------------------------------------
# config helpers


def _model(cfg: dict) -> ControlModelParams:
    return build(ControlModelParams, section(cfg, "device"))


def _device(cfg: dict) -> DeviceParams:
    dev = section(cfg, "device")
    if "omega_c" in dev:
        return build(DeviceParams, dev)
    try:
        return methods_device(**{k: tuple(v) if isinstance(v, list) else v for k, v in dev.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[device]: {exc}") from exc


def _pulse(cfg: dict, dt: float) -> tuple[ControlPulse, float]:
    sec = section(cfg, "pulse")
    return build(ControlPulse, sec, extra=("dt",)), float(sec.get("dt", dt))


def _schedule(cfg: dict) -> PulseSchedule:
    return build(PulseSchedule, section(cfg, "pulse"))


def _with_seed(values: dict, seed) -> dict:
    if seed is not None:
        values["seed"] = seed
    return values


def _phi_grid(sec: dict) -> dict:
    # ``n_phi`` is a shorthand for an evenly spaced grid over [0, 2 pi)
    if "n_phi" in sec:
        sec["phi_grid"] = tuple(np.linspace(0.0, 2 * np.pi, int(sec.pop("n_phi")), endpoint=False))
    return sec


def _tomo_kwargs(sec: dict, seed) -> dict:
    kw = {"shots": int(sec.get("shots", 0)), "seed": int(sec.get("seed", 0) if seed is None else seed)}
    if "times" in sec:
        kw["times"] = np.asarray(sec["times"], float)
    return kw


# ---------------------------------------------------------------------------
# subcommands


def cmd_pulse(args, cfg) -> int:
    model = _model(cfg)
    pulse, dt = _pulse(cfg, 0.1)
    write_envelope_csv(args.out, pulse.sampled(model.d10, model.d21, model.lambda12, dt))
    return EXIT_OK


def cmd_scan(args, cfg) -> int:
    sweep = build(SweepConfig, _with_seed(section(cfg, "sweep"), args.seed))
    write_rows(args.out, transition_error_scan(sweep, jobs=args.jobs), SCAN_COLUMNS)
    return EXIT_OK


def cmd_amplify(args, cfg) -> int:
    model = _model(cfg)
    pulse, dt = _pulse(cfg, DT_CONTROL)
    amp = build(AmplificationConfig, _phi_grid(_with_seed(section(cfg, "amplification"), args.seed)))
    write_rows(args.out, amplification_experiment(amp, pulse, model, dt=dt), AMPLIFY_COLUMNS)
    return EXIT_OK


def cmd_grid(args, cfg) -> int:
    sweep = build(SweepConfig, _with_seed(section(cfg, "sweep"), args.seed))
    rows = fidelity_grid(sweep, section(cfg, "device"), jobs=args.jobs, frame=Frame(args.frame))
    write_rows(args.out, rows, GRID_COLUMNS)
    return EXIT_OK


def cmd_robust(args, cfg) -> int:
    sec = section(cfg, "sweep")
    sec.setdefault("device", section(cfg, "device"))
    write_rows(args.out, robustness_map(build(RobustnessConfig, sec), jobs=args.jobs), ROBUST_COLUMNS)
    return EXIT_OK


def cmd_tomo(args, cfg) -> int:
    ctx = DeviceContext(_device(cfg))
    res = hamiltonian_tomography(_schedule(cfg), ctx, **_tomo_kwargs(section(cfg, "tomography"), args.seed))
    args.out.write_text(json.dumps(res.report(), indent=2, sort_keys=True))
    write_datasets_csv(args.out.with_suffix(".csv"), res.datasets)
    return EXIT_OK


def cmd_calibrate(args, cfg) -> int:
    ctx = DeviceContext(_device(cfg))
    sec = section(cfg, "calibration")
    known = {"max_iter", "threshold", "iy_drag", "n_reps", "shots", "seed", "times"}
    if set(sec) - known:
        raise ConfigError(f"unknown keys for [calibration]: {sorted(set(sec) - known)}")
    opts = {k: sec[k] for k in ("max_iter", "threshold", "iy_drag") if k in sec}
    tomo = _tomo_kwargs(sec, args.seed)
    if args.kind == "echoed":
        state = run_echoed_calibration(ctx, _schedule(cfg), **opts, **tomo)
    else:
        state = run_direct_calibration(ctx, _schedule(cfg), n_reps=int(sec.get("n_reps", 4)), **opts, **tomo)
    state.save_report(args.out)
    return EXIT_OK if state.converged else EXIT_NUMERIC


COMMANDS = {
    "pulse": cmd_pulse,
    "scan": cmd_scan,
    "amplify": cmd_amplify,
    "grid": cmd_grid,
    "robust": cmd_robust,
    "tomo": cmd_tomo,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    """Run the command line; returns 0 on success, 1 on usage or config errors, 2 on numerical failure."""
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(f"crdrag: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("crdrag: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    args.out = args.out or Path(DEFAULT_OUT[args.command])
    try:
        cfg = load_config(args.config) if args.config else {}
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args, cfg)
    except (ConfigError, PulseError) as exc:
        print(f"crdrag: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PropagationError, FitError, CalibrationError, BranchError, np.linalg.LinAlgError) as exc:
        print(f"crdrag: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
