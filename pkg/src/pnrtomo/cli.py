"""Command-line front end: theory, simulate, reconstruct, analyze, pipeline."""

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import BACKEND, __version__, formats
from .analysis import TruncationWarning, fidelity_report, q_grid
from .config import RunConfig, dump_defaults, load
from .detector import N_OUTCOMES, theoretical_povm
from .errors import ConfigError, ParameterError, SchemaError, SolverError
from .probes import build_probe_matrix, choose_truncation, upper_tail
from .reconstruction import build_objective, predicted_response, solve
from .simulator import run_experiment, throughput_report

log = logging.getLogger("pnrtomo")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SOLVER = 4
EXIT_DATA = 5

THEORY_CSV = "povm_theory.csv"
STATS_CSV = "stats.csv"
STATS_JSON = "stats.json"
POVM_CSV = "povm_reconstructed.csv"
RECON_JSON = "reconstruction.json"
FIDELITY_JSON = "fidelity.json"
QGRID_CSV = "qgrid.csv"
OVERLAY_CSV = "q_overlay.csv"


def _provenance(cfg: RunConfig) -> dict:
    return {"tool": "pnrtomo", "version": __version__, "config_sha256": cfg.digest}


def cmd_theory(cfg: RunConfig) -> Path:
    povm = theoretical_povm(cfg.detector, cfg.theory_truncation)
    path = formats.write_povm_csv(cfg.out_dir / THEORY_CSV, povm, cfg.digest)
    log.info("theory: M=%d -> %s", povm.truncation, path)
    return path


def cmd_simulate(cfg: RunConfig):
    stats = run_experiment(cfg.detector, cfg.probes, cfg.simulation)
    tp = throughput_report(cfg.simulation, stats)
    csv_path = formats.write_stats_csv(cfg.out_dir / STATS_CSV, stats, cfg.digest)
    doc = {
        "provenance": _provenance(cfg),
        "config": cfg.raw,
        "seed": cfg.simulation.seed,
        "probes": formats.stats_to_dict(stats),
        "throughput": {
            "accepted_fraction": tp["accepted_fraction"].tolist(),
            "acquisition_time_s": tp["acquisition_time_s"].tolist(),
            "overall_fraction": tp["overall_fraction"],
        },
    }
    json_path = formats.write_json(cfg.out_dir / STATS_JSON, doc)
    log.info("simulate: %d probes, gating=%s -> %s", stats.n_probes, cfg.simulation.gating, csv_path)
    return csv_path, json_path


def _truncation_for(cfg, stats):
    if cfg.reconstruction.truncation is not None:
        return cfg.reconstruction.truncation
    return choose_truncation(list(stats.means), cfg.tail_epsilon)


def cmd_reconstruct(stats_path, cfg: RunConfig):
    stats = formats.read_stats(stats_path)
    if stats.counts.shape[0] != N_OUTCOMES:
        raise SchemaError(f"{stats_path}: expected {N_OUTCOMES} outcomes")
    truncation = _truncation_for(cfg, stats)
    probe_matrix = build_probe_matrix(list(stats.means), truncation)
    qp = build_objective(probe_matrix, stats, cfg.reconstruction)
    result = solve(qp, cfg.reconstruction)
    report = fidelity_report(stats.frequencies, predicted_response(result.povm, probe_matrix), stats.means)
    povm_path = formats.write_povm_csv(cfg.out_dir / POVM_CSV, result.povm, cfg.digest)
    doc = {
        "provenance": _provenance(cfg),
        "config": cfg.raw,
        "stats_file": Path(stats_path).name,
        "diagnostics": result.diagnostics(),
        "regularizer": cfg.reconstruction.regularizer,
        "weighting": cfg.reconstruction.weighting,
        "fidelity": report.to_dict(),
    }
    json_path = formats.write_json(cfg.out_dir / RECON_JSON, doc)
    log.info(
        "reconstruct: M=%d, kkt=%.2g, min F=%.6f -> %s",
        truncation, result.kkt_residual, report.min_fidelity, povm_path,
    )
    return povm_path, json_path


def cmd_analyze(povm_path, stats_path, cfg: RunConfig):
    povm = formats.read_povm_csv(povm_path)
    stats = formats.read_stats(stats_path)
    if povm.n_outcomes != stats.counts.shape[0]:
        raise SchemaError(
            f"dimension mismatch: POVM has {povm.n_outcomes} outcomes, stats have {stats.counts.shape[0]}"
        )
    probe_matrix = build_probe_matrix(list(stats.means), povm.truncation)
    report = fidelity_report(stats.frequencies, predicted_response(povm, probe_matrix), stats.means)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TruncationWarning)
        grid = q_grid(povm, cfg.mesh, stats)
    doc = {
        "provenance": _provenance(cfg),
        "povm_file": Path(povm_path).name,
        "stats_file": Path(stats_path).name,
        "truncation": povm.truncation,
        "probe_tail_beyond_truncation": max(upper_tail(m, povm.truncation + 1) for m in stats.means),
        "mesh": {"extent": cfg.mesh.extent, "points": cfg.mesh.points},
        "mesh_max_tail": float(grid.tail.max()),
        "warnings": sorted({str(w.message) for w in caught}),
        **report.to_dict(),
    }
    paths = (
        formats.write_json(cfg.out_dir / FIDELITY_JSON, doc),
        formats.write_qgrid_csv(cfg.out_dir / QGRID_CSV, grid, cfg.digest),
        formats.write_overlay_csv(cfg.out_dir / OVERLAY_CSV, grid, cfg.digest),
    )
    log.info("analyze: min F=%.6f -> %s", report.min_fidelity, paths[0])
    return paths


def cmd_pipeline(cfg: RunConfig):
    theory = cmd_theory(cfg)
    stats_csv, _ = cmd_simulate(cfg)
    povm_csv, _ = cmd_reconstruct(stats_csv, cfg)
    cmd_analyze(povm_csv, stats_csv, cfg)
    return theory


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnrtomo",
        description="POVM tomography of a beam-splitter-tree photon-number-resolving detector.",
        epilog="Any config field can be overridden as --section.field VALUE.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="simulation RNG seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--probes", help="probe ladder, e.g. geometric:18,0.5,46.8 or list:1,2,5")
    common.add_argument("--smoothing", type=float, help="smoothing weight of the regulariser")
    common.add_argument("--truncation-eps", type=float, help="Poisson tail bound used to pick M")
    common.add_argument("--gating", choices=["smart", "naive", "ideal"])
    common.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("theory", parents=[common], help="write the analytic POVM")
    sub.add_parser("simulate", parents=[common], help="simulate probe statistics")
    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct the POVM from statistics")
    p.add_argument("--stats", help=f"stats CSV or JSON (default OUT/{STATS_CSV})")
    p = sub.add_parser("analyze", parents=[common], help="fidelities and Q-function grids")
    p.add_argument("--povm", help=f"POVM CSV (default OUT/{POVM_CSV})")
    p.add_argument("--stats", help=f"stats CSV or JSON (default OUT/{STATS_CSV})")
    sub.add_parser("pipeline", parents=[common], help="theory, simulate, reconstruct, analyze")
    sub.add_parser("defaults", help="print the default configuration as YAML")
    return parser


def _dotted_overrides(extra):
    """Turn ['--a.b', '1', '--c.d=2'] into {'a.b': '1', 'c.d': '2'}."""
    out = {}
    it = iter(extra)
    for token in it:
        if not token.startswith("--") or "." not in token:
            raise ConfigError(f"unrecognized argument {token!r}")
        key, eq, value = token[2:].partition("=")
        if not eq:
            try:
                value = next(it)
            except StopIteration:
                raise ConfigError(f"missing value for {token}") from None
        out[key] = value
    return out


def _config_from_args(args, extra) -> RunConfig:
    overrides = _dotted_overrides(extra)
    flag_map = {
        "seed": "simulation.seed",
        "out": "output.dir",
        "probes": "probes.spec",
        "smoothing": "reconstruction.smoothing_weight",
        "truncation_eps": "probes.tail_epsilon",
        "gating": "simulation.gating",
    }
    for attr, dotted in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[dotted] = value
    if args.probes is not None:
        overrides["probes.means"] = None
    return load(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "defaults":
        if extra:
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        sys.stdout.write(dump_defaults())
        return EXIT_OK
    try:
        cfg = _config_from_args(args, extra)
        if args.command == "theory":
            cmd_theory(cfg)
        elif args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "reconstruct":
            cmd_reconstruct(args.stats or cfg.out_dir / STATS_CSV, cfg)
        elif args.command == "analyze":
            cmd_analyze(args.povm or cfg.out_dir / POVM_CSV, args.stats or cfg.out_dir / STATS_CSV, cfg)
        elif args.command == "pipeline":
            cmd_pipeline(cfg)
    except ConfigError as exc:
        print(f"pnrtomo: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"pnrtomo: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SolverError as exc:
        print(f"pnrtomo: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (SchemaError, ParameterError) as exc:
        print(f"pnrtomo: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
