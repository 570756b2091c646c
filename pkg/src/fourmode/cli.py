"""Command-line runner: ``fourmode <subcommand> [options]``.

Every run writes into its output directory the resolved configuration
(``config.yaml``), one or more tables (CSV or JSON), a key/value summary
(``summary.txt``) and a timestamped ``run.log``.  Tables and summary carry
the configuration digest and master seed and depend on nothing else, so
identical inputs give byte-identical files.

Exit status: 0 success, 2 configuration error, 3 insufficient statistics,
4 fit failure, 5 input/output error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import OUTPUT_FORMATS, ExperimentConfig
from .detection import Dataset
from .errors import ConfigError, FitError, InsufficientStatisticsError
from .quantum import DEFAULT_CHSH_SETTINGS, bell_input_state, correlation_function
from .simulation import simulate_dataset
from . import workflows as wf

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STATISTICS = 3
EXIT_FIT = 4
EXIT_IO = 5

OUTPUT_ROOT_ENV = "FOURMODE_OUTPUT_ROOT"

log = logging.getLogger("fourmode")


# --- output helpers ---------------------------------------------------------------


class Run:
    """Output directory of one invocation plus the provenance stamped on every file."""

    def __init__(self, cfg: ExperimentConfig, out_dir: Path, fmt: str):
        self.cfg = cfg
        self.out = out_dir
        self.fmt = fmt
        self.out.mkdir(parents=True, exist_ok=True)
        self.provenance = {"config_digest": cfg.digest(), "master_seed": cfg.master_seed}
        cfg.save(self.out / "config.yaml")

    def table(self, name: str, columns: dict) -> Path:
        """Write equal-length columns as ``name.csv`` or ``name.json``."""
        keys = list(columns)
        cols = [np.asarray(columns[k]).tolist() for k in keys]
        rows = list(zip(*cols))
        if self.fmt == "json":
            path = self.out / f"{name}.json"
            payload = {**self.provenance, "columns": keys, "rows": [list(r) for r in rows]}
            path.write_text(json.dumps(payload, indent=1) + "\n")
        else:
            path = self.out / f"{name}.csv"
            lines = [f"# config_digest={self.provenance['config_digest']} master_seed={self.cfg.master_seed}",
                     ",".join(keys)]
            lines += [",".join(_fmt(v) for v in r) for r in rows]
            path.write_text("\n".join(lines) + "\n")
        log.info("wrote %s", path)
        return path

    def summary(self, tree: dict) -> Path:
        path = self.out / "summary.txt"
        body = {**self.provenance, **_plain(tree)}
        path.write_text(yaml.safe_dump(body, sort_keys=False, default_flow_style=False))
        log.info("wrote %s", path)
        return path


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _plain(obj):
    """Convert numpy scalars/arrays and tuples into YAML-safe builtins."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _estimate(e) -> dict:
    return {"value": float(e.value), "sigma": float(e.sigma)}


def _fit_dict(fit) -> dict | None:
    if fit is None:
        return None
    return {"amplitude": fit.amplitude, "center": fit.center, "sigma": fit.sigma, "offset": fit.offset,
            "errors": fit.errors, "chi2": fit.chi2, "dof": fit.dof}


# --- subcommands --------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, run: Run, args) -> None:
    ds = simulate_dataset(cfg.source, cfg.detector, cfg.shots, cfg.master_seed,
                          cfg.pulses.optics(), workers=args.workers)
    path = run.out / "dataset.jsonl"
    ds.save(path)
    sizes = np.diff(ds.offsets)
    run.table("shots", {"shot": np.arange(ds.n_shots), "n_atoms": sizes})
    run.summary({"subcommand": "simulate", "n_shots": ds.n_shots, "n_atoms": int(sizes.sum()),
                 "mean_atoms_per_shot": float(sizes.mean()), "dataset": path.name})


def _load_or_simulate(cfg, args, with_optics: bool) -> Dataset:
    if getattr(args, "dataset", None):
        try:
            return Dataset.load(args.dataset)
        except ValueError as exc:
            raise OSError(f"cannot read dataset {args.dataset}: {exc}") from exc
    optics = cfg.pulses.optics() if with_optics else None
    return simulate_dataset(cfg.source, cfg.detector, cfg.shots, cfg.master_seed, optics, workers=args.workers)


def cmd_g2_map(cfg: ExperimentConfig, run: Run, args) -> None:
    ds = _load_or_simulate(cfg, args, with_optics=False)
    g = cfg.g2_map
    result = wf.g2_grid(ds, g.min_mm_per_s, g.max_mm_per_s, g.step_mm_per_s, g.window)
    vp, vm = np.meshgrid(result.v_plus, result.v_minus, indexing="ij")
    run.table("g2_map", {"v_plus_mm_per_s": vp.ravel(), "v_minus_mm_per_s": vm.ravel(),
                         "g2": np.where(result.valid, result.g2, np.nan).ravel(),
                         "valid": result.valid.ravel().astype(int)})
    proj = wf.g2_projections(ds, n_resamples=max(100, cfg.analysis.n_resamples // 5),
                             seed=wf.derive_seed(cfg.master_seed, 6))
    for name, p in (("g2_long_axis", proj.long_axis), ("g2_short_axis", proj.short_axis)):
        run.table(name, {"coordinate_mm_per_s": p.coordinate, "g2": p.g2, "error": p.errors})
    try:
        angle, major, minor = result.principal_axes()
        axes = {"angle_rad": angle, "major_mm_per_s": major, "minor_mm_per_s": minor}
    except InsufficientStatisticsError:
        axes = None
    run.summary({"subcommand": "g2-map", "n_shots": ds.n_shots, "window": g.window,
                 "peak_mm_per_s": list(result.peak()), "principal_axes": axes,
                 "long_axis_fit": _fit_dict(proj.long_axis.fit),
                 "short_axis_fit": _fit_dict(proj.short_axis.fit)})


def cmd_joint_probs(cfg: ExperimentConfig, run: Run, args) -> None:
    ds = _load_or_simulate(cfg, args, with_optics=True)
    optics = cfg.pulses.optics()
    report = wf.joint_probability_analysis(ds, cfg.mode_sets(), cfg.source, optics,
                                           cfg.analysis.n_resamples, wf.derive_seed(cfg.master_seed, 7))
    cols = {"set": [], "v_p_mm_per_s": []}
    for name in ("P_pp", "P_mm", "P_pm", "P_mp"):
        cols[name] = []
        cols[name + "_err"] = []
    cols.update({"E": [], "E_err": [], "E_single_pair": []})
    for s in report.sets:
        cols["set"].append(s.mode_set.label)
        cols["v_p_mm_per_s"].append(s.mode_set.v_p)
        for k, name in enumerate(("P_pp", "P_mm", "P_pm", "P_mp")):
            cols[name].append(float(s.probabilities[k]))
            cols[name + "_err"].append(float(s.probability_errors[k]))
        cols["E"].append(s.correlation.value)
        cols["E_err"].append(s.correlation.sigma)
        cols["E_single_pair"].append(s.analytic_correlation)
    run.table("joint_probabilities", cols)
    run.table("reference_sets", {"combination": ["".join(str(i + 1) for i in c) for c in report.combinations],
                                 "E": report.reference_correlations})
    summary = {"subcommand": "joint-probs", "n_shots": report.n_shots,
               "reference_E_pooled": _estimate(report.pooled_reference)}
    if len(report.combinations) > 1:
        summary["reference_E_spread"] = report.reference_spread
        summary["reference_mean_probabilities"] = dict(zip(("P_pp", "P_mm", "P_pm", "P_mp"),
                                                           report.reference_probabilities))
    try:
        v, dv = wf.visibility_fit(report)
        summary["visibility"] = {"value": v, "sigma": dv}
    except FitError:
        summary["visibility"] = None
    run.summary(summary)


def cmd_hom_scan(cfg: ExperimentConfig, run: Run, args) -> None:
    h = cfg.hom_scan
    shots = args.shots if args.shots is not None else h.shots_per_point
    source = cfg.source.replace(mean_pairs_per_mode=h.mean_pairs_per_mode)
    res = wf.hom_run(source, cfg.detector, cfg.pulses.optics(), h.times_us(), shots, cfg.master_seed,
                     n_resamples=max(100, cfg.analysis.n_resamples // 5), workers=args.workers)
    run.table("hom_scan", {"splitter_start_us": res.times_us,
                           "P_joint": [e.value for e in res.estimates],
                           "P_joint_err": [e.sigma for e in res.estimates]})
    run.summary({"subcommand": "hom-scan", "shots_per_point": shots,
                 "closing_time_us": res.scan.center, "visibility": res.scan.visibility,
                 "fit": _fit_dict(res.scan.fit)})


def cmd_phase_scan(cfg: ExperimentConfig, run: Run, args) -> None:
    sets = cfg.mode_sets()
    table = wf.phase_scan(sets, cfg.pulses.rabi_frequency, cfg.analysis.phase_points)
    run.table("phase_scan", table)
    rows = wf.fringe_offsets(sets, cfg.pulses.bragg_pulses())
    run.table("phase_offsets", {
        "set": [r.mode_set.label for r in rows],
        "v_p_mm_per_s": [r.mode_set.v_p for r in rows],
        "detuning_hz": [r.mode_set.detuning / (2 * math.pi) for r in rows],
        "offset_first_order_deg": [math.degrees(r.first_order) for r in rows],
        "offset_exact_deg": [math.degrees(r.exact) for r in rows],
        "visibility_exact": [r.exact_visibility for r in rows],
    })
    run.summary({"subcommand": "phase-scan", "n_points": cfg.analysis.phase_points,
                 "max_abs_E_resonant_minus_cos": float(np.max(np.abs(table["E_resonant"] - np.cos(table["dphi_rad"]))))})


def cmd_bell(cfg: ExperimentConfig, run: Run, args) -> None:
    shots = args.shots if args.shots is not None else cfg.analysis.bell_shots
    E = correlation_function(bell_input_state())
    analytic = [E(a, b) for a, b in DEFAULT_CHSH_SETTINGS]
    s_analytic = wf.bell_analytic()
    mc = wf.bell_monte_carlo(shots, cfg.master_seed, n_resamples=max(100, cfg.analysis.n_resamples // 2))
    run.table("bell", {"phi_A_rad": [a for a, _ in DEFAULT_CHSH_SETTINGS],
                       "phi_B_rad": [b for _, b in DEFAULT_CHSH_SETTINGS],
                       "E_analytic": analytic,
                       "E_monte_carlo": [e.value for e in mc.correlations],
                       "E_monte_carlo_err": [e.sigma for e in mc.correlations]})
    run.summary({"subcommand": "bell", "S_analytic": s_analytic, "S_monte_carlo": _estimate(mc.S),
                 "shots_per_setting": mc.shots_per_setting})


def cmd_calibrate_gain(cfg: ExperimentConfig, run: Run, args) -> None:
    a = cfg.analysis
    shots = args.shots if args.shots is not None else a.calibration_shots
    cal = wf.calibrate_gain(cfg.source, cfg.detector, cfg.mode_sets(), a.target_atoms_per_volume, shots,
                            cfg.master_seed, workers=args.workers)
    run.table("calibration", {"iteration": list(range(len(cal.history))),
                              "mean_pairs_per_mode": [g for g, _ in cal.history],
                              "atoms_per_volume": [o for _, o in cal.history]})
    calibrated = cfg.replace(source=cfg.source.replace(mean_pairs_per_mode=cal.mean_pairs_per_mode))
    calibrated.save(run.out / "calibrated_config.yaml")
    run.summary({"subcommand": "calibrate-gain", "target_atoms_per_volume": a.target_atoms_per_volume,
                 "mean_pairs_per_mode": cal.mean_pairs_per_mode,
                 "last_measured_atoms_per_volume": cal.occupancy})


COMMANDS = {
    "simulate": (cmd_simulate, "generate and store a dataset"),
    "g2-map": (cmd_g2_map, "g2 map and its long/short-axis projections"),
    "joint-probs": (cmd_joint_probs, "joint probabilities and E per mode set, with the reference-set zero level"),
    "hom-scan": (cmd_hom_scan, "joint-detection dip versus splitter start time"),
    "phase-scan": (cmd_phase_scan, "analytic E versus phase difference and per-set fringe offsets"),
    "bell": (cmd_bell, "CHSH value, analytic and Monte Carlo"),
    "calibrate-gain": (cmd_calibrate_gain, "tune the gain to a target occupancy of the port volumes"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fourmode", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="YAML experiment configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--shots", type=int, help="number of shots (overrides the config)")
        p.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")
        p.add_argument("--workers", type=int, default=1, help="worker processes for shot generation")
        p.add_argument("--format", choices=OUTPUT_FORMATS, help="table format")
        if name in ("g2-map", "joint-probs"):
            p.add_argument("--dataset", type=Path, help="analyse a stored dataset instead of simulating")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.shots is not None:
        if args.shots < 1:
            raise ConfigError("--shots must be >= 1")
        changes["shots"] = args.shots
    if args.format is not None:
        changes["outputs"] = type(cfg.outputs)(cfg.outputs.directory, args.format)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return cfg.replace(**changes) if changes else cfg


def output_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out is not None:
        return args.out
    root = os.environ.get(OUTPUT_ROOT_ENV) or cfg.outputs.directory
    return Path(root) / args.command


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = None
    try:
        run = Run(cfg, output_dir(args, cfg), cfg.outputs.format)
        handler = logging.FileHandler(run.out / "run.log", mode="w")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
        log.info("%s: config_digest=%s master_seed=%d", args.command, cfg.digest(), cfg.master_seed)
        COMMANDS[args.command][0](cfg, run, args)
        log.info("done")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientStatisticsError as exc:
        print(f"insufficient statistics: {exc}", file=sys.stderr)
        return EXIT_STATISTICS
    except FitError as exc:
        print(f"fit failed: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_FIT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        if handler is not None:
            log.removeHandler(handler)
            handler.close()
    print(f"results in {run.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
