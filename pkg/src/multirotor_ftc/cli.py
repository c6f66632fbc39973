"""Command-line front end: ``multirotor-ftc {avcs,simulate,sysid,calibrate}``.

Every subcommand writes CSV and JSON artifacts into ``--out`` and prints a
short summary. Exit status is 0 on success, 1 for bad input (missing files,
malformed JSON/CSV, out-of-range options) and 2 for numerical failures
(ill-conditioned fits, unidentifiable calibration, divergent simulation).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import avcs as avcs_mod
from . import data as bundled
from .avcs import InfeasibleThrustError
from .dynamics import DivergenceError
from .imu_calibration import NonIdentifiableError, SpinLog, corrected_tilt, estimate_offset, tilt_error
from .sim import load_scenario, run_scenario, write_outputs
from .sysid import (DEFAULT_CUTOFF_HZ, IllConditionedError, RlsState, build_dataset, ols_fit,
                    residual_report, rls_run)
from .vehicle import AXES, RankDeficiencyError, apply_failure, build_effectiveness, load_vehicle

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

# yaw fits this poor usually mean the log never exercised the yaw axis
YAW_R2_WARNING = 0.5


class NumericFailure(RuntimeError):
    """Raised by a subcommand when the computation itself fails."""


# --- small IO helpers ----------------------------------------------------------------

def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["{:.12g}".format(v) if isinstance(v, float) else v for v in row])


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n",
                    encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def read_log_csv(path) -> dict:
    """Columns of a labeled CSV log as float arrays; non-numeric columns are skipped."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"log not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: empty log")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: log has a header but no samples")
    cols = {}
    for j, name in enumerate(header):
        try:
            cols[name] = np.array([float(r[j]) for r in rows])
        except (ValueError, IndexError):
            continue
    return cols


def _require(cols: dict, names, path):
    missing = [c for c in names if c not in cols]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    return np.column_stack([cols[c] for c in names])


def _vehicle(ref):
    path = Path(ref)
    if not path.suffix:
        return bundled.vehicle(str(ref))
    if not path.exists():
        raise FileNotFoundError(f"vehicle file not found: {ref}")
    return load_vehicle(path)


# --- avcs ------------------------------------------------------------------------------

def cmd_avcs(args) -> int:
    cfg = _vehicle(args.vehicle)
    base = build_effectiveness(cfg)
    fails = args.fail if args.fail else list(range(cfg.n))
    for i in fails:
        if not 0 <= i < cfg.n:
            raise ValueError(f"--fail {i} out of range for a {cfg.n}-rotor vehicle")
    if not 0.0 < args.thrust < 1.0:
        raise ValueError("--thrust is a fraction of maximum thrust and must lie in (0, 1)")
    if not 0.0 <= args.yaw_fraction <= 1.0:
        raise ValueError("--yaw-fraction must lie in [0, 1]")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    thrust = args.thrust * base.max_thrust
    header = [f"M_{a}" if a != "thrust" else "F_thrust" for a in AXES]
    # exported geometry can be divided by the nominal max thrust, the unit used in plots
    unit = base.max_thrust if args.normalize else 1.0

    cases = {"nominal": base}
    cases.update({f"fail_{i}": apply_failure(base, i) for i in fails})
    report = {"vehicle": cfg.name, "thrust_fraction": args.thrust, "thrust": thrust,
              "yaw_fraction": args.yaw_fraction, "csv_unit": unit, "cases": {}}
    for label, model in cases.items():
        cset = avcs_mod.build_avcs(model)
        _write_csv(out / f"vertices_{label}.csv", header, (cset.vertices / unit).tolist())
        poly = avcs_mod.yaw_slice_polygon(cset, thrust)
        _write_csv(out / f"slice_{label}.csv", ["M_roll", "M_pitch"], (poly / unit).tolist())
        verdict = avcs_mod.classify(model, thrust, args.yaw_fraction)
        report["cases"][label] = {"failed": sorted(model.failed), **verdict.to_dict()}
        print(f"{label}: case {verdict.case_id} "
              f"(tilt margin at zero yaw {verdict.tilt_margin_at_zero_yaw:.4g}, "
              f"with free yaw {verdict.tilt_margin_with_free_yaw:.4g})")
    _write_json(out / "classification.json", report)
    return EXIT_OK


# --- simulate --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec = load_scenario(args.scenario)
    if args.seed is not None:
        spec.seed = args.seed
    if args.duration is not None:
        if args.duration <= 0:
            raise ValueError("--duration must be positive")
        spec.duration = args.duration
    result = run_scenario(spec)
    out = Path(args.out or spec.output or f"sim_{spec.name or 'run'}")
    log_path, sum_path = write_outputs(result, out)
    s = result.summary
    print(f"wrote {log_path} and {sum_path} ({len(result.rows)} samples, {result.runtime:.1f} s)")
    if "settled_spin_rate_deg_s" in s:
        print(f"settled |r| {s['settled_spin_rate_deg_s']:.1f} deg/s, "
              f"median tilt error {s['tilt_error_deg']['median']:.2f} deg")
    if s.get("diverged"):
        raise NumericFailure(f"simulation diverged at tick {s['diverged_tick']}")
    return EXIT_OK


# --- sysid -----------------------------------------------------------------------------

def _ident_inputs(cols, path):
    n = sum(1 for c in cols if c.startswith("omega_"))
    if n == 0:
        raise ValueError(f"{path}: no omega_<i> rotor speed columns")
    t = _require(cols, ["time"], path)[:, 0]
    w = _require(cols, [f"omega_{i}" for i in range(n)], path)
    g = _require(cols, ["gyro_x", "gyro_y", "gyro_z"], path)
    a = _require(cols, ["accel_x", "accel_y", "accel_z"], path)
    return t, w, g, a


def cmd_sysid(args) -> int:
    if not 0.0 < args.lambda_ <= 1.0:
        raise ValueError("--lambda must lie in (0, 1]")
    cols = read_log_csv(args.log)
    t, w, g, a = _ident_inputs(cols, args.log)
    warm = None
    scale = None
    if args.warm_start:
        warm = json.loads(Path(args.warm_start).read_text(encoding="utf-8"))
        scale = (np.asarray(warm["x_scale"]), np.asarray(warm["y_scale"]))
        if len(scale[0]) != w.shape[1]:
            raise ValueError("warm-start model and log disagree on the rotor count")
    ds = build_dataset(t, w, g, a, cutoff_hz=args.cutoff, scale=scale)
    if warm is not None:
        state = RlsState(np.asarray(warm["coef_normalized"]), np.asarray(warm["P_unscaled"]),
                         args.lambda_)
        rls_run(state, ds)
        coef, P, method = state.A_hat, state.P, "rls_warm_start"
        if state.diverged:
            raise NumericFailure("RLS covariance diverged; lower the forgetting or add excitation")
    elif args.lambda_ < 1.0:
        state = RlsState.cold_start(ds.n_rotors, 4, args.lambda_)
        rls_run(state, ds)
        coef, P, method = state.A_hat, state.P, "rls_cold_start"
    else:
        fit = ols_fit(ds)
        coef, P, method = fit.coef, fit.P_unscaled, "ols"
    report = residual_report(ds, coef)
    model = {
        "method": method,
        "lambda": args.lambda_,
        "cutoff_hz": args.cutoff,
        "n_rotors": ds.n_rotors,
        "axes": list(AXES),
        "scaled_G_estimate": ds.to_physical(coef).T.tolist(),
        "coef_normalized": np.asarray(coef).tolist(),
        "P_unscaled": np.asarray(P).tolist(),
        "x_scale": ds.x_scale.tolist(),
        "y_scale": ds.y_scale.tolist(),
        "samples": int(len(ds.x)),
    }
    warnings = []
    r2_yaw = report.r_squared.get("yaw")
    if r2_yaw is None or not math.isfinite(r2_yaw) or r2_yaw < YAW_R2_WARNING:
        warnings.append(f"yaw fit is weak (held-out R^2 {r2_yaw:.3g}); the log may lack "
                        "yaw excitation, so the yaw row of G is not trustworthy")
    if not report.diagonal:
        warnings.append("parameter covariance is not diagonal: rotor inputs were correlated")
    model["warnings"] = warnings
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "model.json", model)
    _write_json(out / "residuals.json", report.to_dict())
    r2 = ", ".join(f"{k} {v:.3f}" for k, v in report.r_squared.items())
    print(f"{method}: held-out R^2 {r2}")
    for msg in warnings:
        print(f"warning: {msg}", file=sys.stderr)
    return EXIT_OK


# --- calibrate ---------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    cols = read_log_csv(args.log)
    t = _require(cols, ["time"], args.log)[:, 0]
    log = SpinLog(t, _require(cols, ["gyro_x", "gyro_y", "gyro_z"], args.log),
                  _require(cols, ["accel_x", "accel_y", "accel_z"], args.log))
    est = estimate_offset(log, tilt_bias=args.tilt_bias)
    raw = tilt_error(log.accel)
    fixed = corrected_tilt(log, est.r_v)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = est.to_dict()
    report["median_tilt_raw"] = float(np.median(raw))
    report["median_tilt_corrected"] = float(np.median(fixed))
    _write_json(out / "calibration.json", report)
    _write_csv(out / "tilt.csv", ["time", "spin_rate", "tilt_raw", "tilt_corrected"],
               [[float(a), float(b), float(c), float(d)]
                for a, b, c, d in zip(log.time, log.spin_rate, raw, fixed)])
    r = est.r_v
    print(f"r_v = ({r[0]:.5f}, {r[1]:.5f}, {r[2]:.5f}) m, identifiable axes {''.join(est.identifiable_axes)}; "
          f"median tilt {math.degrees(report['median_tilt_raw']):.2f} -> "
          f"{math.degrees(report['median_tilt_corrected']):.2f} deg")
    return EXIT_OK


# --- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multirotor-ftc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("avcs", help="attainable control sets and controllability cases")
    a.add_argument("vehicle", help="vehicle JSON path or bundled name")
    a.add_argument("--fail", type=int, action="append", default=[],
                   help="0-based rotor to fail (repeatable; default: each rotor in turn)")
    a.add_argument("--thrust", type=float, default=0.5, help="hover thrust as a fraction of max")
    a.add_argument("--yaw-fraction", type=float, default=avcs_mod.YAW_FRACTION_PROBE,
                   help="yaw moment probe as a fraction of the max attainable yaw")
    a.add_argument("--normalize", action="store_true",
                   help="divide exported vertices and slices by the nominal max thrust")
    a.add_argument("--out", default="avcs_out")
    a.set_defaults(func=cmd_avcs)

    s = sub.add_parser("simulate", help="run a closed-loop scenario")
    s.add_argument("scenario", help="scenario JSON path or bundled name")
    s.add_argument("--out", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--duration", type=float, default=None)
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("sysid", help="identify the effectiveness matrix from a flight log")
    i.add_argument("log")
    i.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF_HZ)
    i.add_argument("--lambda", dest="lambda_", type=float, default=1.0)
    i.add_argument("--warm-start", default=None, help="model.json from an earlier run")
    i.add_argument("--out", default="sysid_out")
    i.set_defaults(func=cmd_sysid)

    c = sub.add_parser("calibrate", help="estimate the IMU lever arm from a ground-spin log")
    c.add_argument("log")
    c.add_argument("--tilt-bias", action="store_true",
                   help="also absorb a constant tilt offset (airframe wobble)")
    c.add_argument("--out", default="calibration_out")
    c.set_defaults(func=cmd_calibrate)
    return p


NUMERIC_ERRORS = (NumericFailure, IllConditionedError, NonIdentifiableError, InfeasibleThrustError,
                  DivergenceError, RankDeficiencyError, np.linalg.LinAlgError, FloatingPointError)
INPUT_ERRORS = (OSError, ValueError, KeyError, IndexError, TypeError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
