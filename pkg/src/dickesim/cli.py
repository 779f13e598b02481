"""Command-line entry point: ``dickesim <subcommand> CONFIG``.

Every subcommand reads an INI file (see :mod:`dickesim.config`), writes
plot-ready CSV and/or a JSON summary into ``[output] dir`` and exits with a
category code on failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import lindblad
from .config import ConfigError, RunConfig, load_config
from .disentangle import run_disentangle
from .hilbert import TruncationError
from .model import (
    ConstantRamp,
    angular_to_khz,
    config_hash,
    critical_field,
    crossing_time,
    khz_to_angular,
)
from .observables import (
    apply_dephasing,
    bimodal_peaks,
    infer_spin_phonon,
    oscillation_amplitude,
)
from .propagate import KrylovConvergenceError, TrajectoryRecord, run_lipkin_quench, run_quench, sweep_nbar
from .spectrum import SpectrumError, default_field_grid, interior_minima, scan_gap_vs_N_and_B, scan_gap_vs_detuning

log = logging.getLogger("dickesim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRUNCATION = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5

SIG_DIGITS = 12


def fmt(x) -> str:
    """Fixed 12-significant-digit text; integers stay integers."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    out = f"{x:.{SIG_DIGITS}g}"
    return "0" if out == "-0" else out


def _clean(obj):
    """JSON-ready copy with floats rounded to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(fmt(x))
    return obj


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out(run: RunConfig, name: str) -> Path:
    d = run.output_dir
    d.mkdir(parents=True, exist_ok=True)
    prefix = run.values["output"]["prefix"]
    return d / (f"{prefix}_{name}" if prefix else name)


def _m_label(m: float) -> str:
    return f"P(M={fmt(m)})"


QUENCH_COLUMNS = (
    "Sx", "Sx_dephased", "Sy", "abs_Sz_over_N", "n_phonon",
    "orderparam_z", "corr_sy", "corr_sy_inferred", "parity",
)


def trajectory_table(rec: TrajectoryRecord, run: RunConfig) -> tuple[list[str], np.ndarray]:
    cfg = run.dicke
    N = rec.N
    sx_deph = apply_dephasing(rec.sx, rec.times, cfg.gamma_el)
    if cfg.g0 > 0:
        inferred = infer_spin_phonon(sx_deph, rec.times, N, cfg.g0, cfg.gamma_el)
    else:
        inferred = np.full_like(rec.sx, np.nan)
    header = ["t_ms", "B_kHz", *[_m_label(m) for m in rec.m], *QUENCH_COLUMNS]
    cols = [
        rec.times,
        angular_to_khz(rec.field),
        *rec.p_mz.T,
        rec.sx,
        sx_deph,
        rec.sy,
        rec.abs_sz / N,
        rec.n_phonon,
        rec.corr_sz,
        rec.corr_sy,
        inferred,
        rec.parity,
    ]
    return header, np.column_stack(cols)


def trajectory_summary(rec: TrajectoryRecord, run: RunConfig, model: str) -> dict:
    cfg = run.dicke
    b_c = critical_field(cfg)
    peaks = bimodal_peaks(rec.p_mz[-1])
    final = rec.final()
    final["abs_sz_over_N"] = final["abs_sz"] / rec.N
    final["field_kHz"] = angular_to_khz(final.pop("field"))
    return {
        "model": model,
        "N": cfg.N,
        "B_c_kHz": angular_to_khz(b_c),
        "t_crit_ms": crossing_time(cfg.ramp, b_c),
        "duration_ms": cfg.duration,
        "final": final,
        "final_bimodal_peaks": list(peaks) if peaks else None,
        "diagnostics": rec.meta,
        "config": run.echo(),
        "config_hash": config_hash(cfg),
    }


def _emit_trajectory(run: RunConfig, rec: TrajectoryRecord, name: str, model: str) -> dict:
    header, table = trajectory_table(rec, run)
    write_csv(_out(run, f"{name}.csv"), header, table)
    summary = trajectory_summary(rec, run, model)
    write_json(_out(run, f"{name}.json"), summary)
    return summary


def cmd_quench(run: RunConfig) -> dict:
    rec = run_quench(run.dicke, workers=run.workers)
    return _emit_trajectory(run, rec, "quench", "dicke")


def cmd_lipkin(run: RunConfig) -> dict:
    rec = run_lipkin_quench(run.dicke)
    return _emit_trajectory(run, rec, "lipkin", "lipkin")


def cmd_spectrum(run: RunConfig) -> dict:
    cfg, sec = run.dicke, run.section("spectrum")
    grid = default_field_grid(cfg, sec["b_points"], sec["b_max_over_bc"])
    rows = scan_gap_vs_N_and_B(cfg.with_(n_max=None), sec["n_list"], grid)
    minima = {}
    for N in sec["n_list"]:
        gaps = [r["gap"] for r in rows if r["N"] == N]
        idx = interior_minima(gaps)
        minima[N] = [angular_to_khz(grid[i]) for i in idx]
    write_csv(
        _out(run, "spectrum.csv"),
        ["N", "B_kHz", "gap_kHz", "orderparam", "has_interior_min"],
        ([r["N"], angular_to_khz(r["B"]), angular_to_khz(r["gap"]), r["orderparam"], int(bool(minima[r["N"]]))]
         for r in rows),
    )
    summary = {
        "B_c_kHz": angular_to_khz(critical_field(cfg)),
        "interior_minima_kHz": minima,
        "config": run.echo(),
        "config_hash": config_hash(cfg),
    }
    write_json(_out(run, "spectrum.json"), summary)
    return summary


def cmd_scan_detuning(run: RunConfig) -> dict:
    sec = run.section("scan-detuning")
    b_c = khz_to_angular(sec["bc_khz"])
    deltas = [r * b_c for r in sec["delta_over_bc"]]
    rows = scan_gap_vs_detuning(b_c, deltas, sec["n"], template=run.dicke)
    write_csv(
        _out(run, "scan_detuning.csv"),
        ["delta_kHz", "gap_at_Bc_kHz"],
        ([angular_to_khz(r["delta"]), angular_to_khz(r["gap"])] for r in rows),
    )
    summary = {"rows": len(rows), "config": run.echo(), "config_hash": config_hash(run.dicke)}
    write_json(_out(run, "scan_detuning.json"), summary)
    return summary


def cmd_disentangle(run: RunConfig) -> dict:
    sec = run.section("disentangle")
    report = run_disentangle(run.dicke, sec["protocol"], sec["initial_state"], sec["compare"])
    report.update(config=run.echo(), config_hash=config_hash(run.dicke))
    write_json(_out(run, "disentangle.json"), report)
    return report


def _entry(name, value, threshold, ok, **extra) -> dict:
    return {"check": name, "value": value, "threshold": threshold, "pass": bool(ok), **extra}


def validation_suite(run: RunConfig) -> list[dict]:
    cfg, sec = run.dicke, run.section("validate")
    entries = []

    inf_cfg = cfg.with_(N=sec["inference_n"], nbar=0.0, n_max=None, n_samples=sec["inference_samples"])
    rep = lindblad.validate_inference(inf_cfg, sec["inference_samples"], gamma_inference=sec["gamma_inference_per_s"])
    entries.append(_entry("inference_identity_residual", rep["identity_residual"], rep["identity_threshold"],
                          rep["identity_ok"], gamma_inference_per_s=rep["gamma_inference"]))
    entries.append(_entry("inference_fd_error_production", rep["fd_error_production"], 0.05,
                          rep["fd_error_production"] < 0.05, samples=sec["inference_samples"]))
    entries.append(_entry("inference_fd_error_dense", rep["fd_error_dense"], 0.005, rep["fd_error_dense"] < 0.005,
                          samples=(sec["inference_samples"] - 1) * 10 + 1))

    closed_cfg = cfg.with_(N=sec["closed_n"], nbar=0.0, n_max=None, gamma_el=0.0, n_samples=21)
    closed_cfg = closed_cfg.with_(ramp=ConstantRamp(critical_field(closed_cfg), 0.5), t_final=None)
    closed = lindblad.closed_system_check(closed_cfg)
    entries.append(_entry("closed_system_trace_distance", closed["trace_distance"], 1e-6,
                          closed["trace_distance"] < 1e-6))
    entries.append(_entry("closed_system_total_spin_drift", closed["total_spin_drift"], 1e-8,
                          closed["total_spin_drift"] < 1e-8))

    gamma = sec["decay_gamma_el_per_s"]
    pure = lindblad.pure_dephasing_check(sec["decay_n"], gamma, sec["decay_t_final_ms"])
    entries.append(_entry("pure_dephasing_sx_error", pure["max_abs_error"], 1e-5, pure["max_abs_error"] < 1e-5))
    entries.append(_entry("pure_dephasing_rate_relative_error", pure["relative_rate_error"], 0.01,
                          pure["relative_rate_error"] < 0.01))

    dec_cfg = cfg.with_(N=sec["decay_n"], nbar=0.0, n_max=None, gamma_el=gamma, n_samples=81)
    b = sec["decay_field_over_bc"] * critical_field(dec_cfg)
    dec_cfg = dec_cfg.with_(ramp=ConstantRamp(b, sec["decay_t_final_ms"]), t_final=None)
    rate = lindblad.sx_decay_rate(dec_cfg, n_max=12)
    expected = 0.5 * gamma * 1e-3
    entries.append(_entry("strong_field_decay_rate_vs_half_gamma", rate / expected, 0.2,
                          abs(rate / expected - 1.0) < 0.2, fitted_rate_per_ms=rate))
    return entries


def cmd_validate(run: RunConfig) -> dict:
    entries = validation_suite(run)
    report = {
        "checks": entries,
        "all_pass": all(e["pass"] for e in entries),
        "config": run.echo(),
        "config_hash": config_hash(run.dicke),
    }
    write_json(_out(run, "validate.json"), report)
    return report


def cmd_sweep_nbar(run: RunConfig) -> dict:
    nbars = run.section("sweep-nbar")["nbar_list"]
    recs = sweep_nbar(run.dicke, nbars, workers=run.workers)
    first = recs[float(nbars[0])]
    N = first.N
    header = ["t_ms", "B_kHz", *[f"abs_Sz_over_N(nbar={fmt(nb)})" for nb in nbars]]
    table = np.column_stack([first.times, angular_to_khz(first.field), *[recs[float(nb)].abs_sz / N for nb in nbars]])
    write_csv(_out(run, "sweep_nbar.csv"), header, table)
    summary = {
        "nbar": list(nbars),
        "oscillation_amplitude_over_N": [oscillation_amplitude(recs[float(nb)].abs_sz / N, first.times) for nb in nbars],
        "final_abs_sz_over_N": [float(recs[float(nb)].abs_sz[-1] / N) for nb in nbars],
        "config": run.echo(),
        "config_hash": config_hash(run.dicke),
    }
    write_json(_out(run, "sweep_nbar.json"), summary)
    return summary


COMMANDS = {
    "quench": (cmd_quench, "thermally averaged Dicke ramp: trajectory CSV + JSON summary"),
    "lipkin": (cmd_lipkin, "same ramp under the spin-only Lipkin model"),
    "spectrum": (cmd_spectrum, "parity-resolved gap and order parameter over (N, B)"),
    "scan-detuning": (cmd_scan_detuning, "gap at B_c versus detuning at fixed B_c"),
    "disentangle": (cmd_disentangle, "ramp, disentangling protocol and cat diagnostics"),
    "validate": (cmd_validate, "master-equation oracle checks of the dephasing and inference models"),
    "sweep-nbar": (cmd_sweep_nbar, "quench at several initial thermal occupations"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dickesim", description="Dicke-model quench simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="INI configuration file")
        p.add_argument("--out", help="override [output] dir")
        if name == "validate":
            p.add_argument("--corrupt-gamma", type=float, metavar="PER_S",
                           help="negative control: use this gamma_el (1/s) in the inference check")
            p.add_argument("--strict", action="store_true", help="exit 1 if any check fails")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = load_config(args.config)
        if args.out:
            run.values["output"]["dir"] = args.out
        if getattr(args, "corrupt_gamma", None) is not None:
            run.values["validate"]["gamma_inference_per_s"] = args.corrupt_gamma
        func = COMMANDS[args.command][0]
        result = func(run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TruncationError as exc:
        print(f"truncation error: {exc}; raise [numerics] n_max", file=sys.stderr)
        return EXIT_TRUNCATION
    except (KrylovConvergenceError, SpectrumError, lindblad.PositivityError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.command == "validate":
        for e in result["checks"]:
            print(f"{'PASS' if e['pass'] else 'FAIL'} {e['check']}: {fmt(e['value'])} (threshold {fmt(e['threshold'])})")
        if args.strict and not result["all_pass"]:
            return 1
    print(f"wrote {args.command} output to {run.output_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
