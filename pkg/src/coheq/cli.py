"""Command-line front end: run directories, subcommands, CSV/JSON emission.

Every subcommand is deterministic given (config, seed) and idempotent over
its output directory: completed artifacts are detected and skipped, partial
runs resume, and all files are written atomically (temp file + rename).
Environment variables override nothing except the output directory
(``COHEQ_OUTPUT_DIR``) and the worker count (``COHEQ_WORKERS``); command-line
flags take precedence over both.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import struct
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from datetime import datetime, timezone
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig, default_config, dumps_config, load_config
from .dataset import LinkDataset, load_dataset, save_dataset
from .metrics import (
    count_real_multipliers,
    load_hw_tables,
    report_from_ber,
    resource_table_report,
)
from .nn.evaluation import evaluate_model
from .nn.io import load_model, save_model
from .nn.model import EqualizerModel, build_bilstm_cnn, build_deep_cnn
from .nn.quantized import FixedPointModel, quantize_int32
from .nn.training import TrainingDiverged, TrainResult

__all__ = ["main", "CliError", "EXIT_CODES", "CSV_SCHEMA_VERSION"]

log = logging.getLogger("coheq")

CSV_SCHEMA_VERSION = "coheq-csv v1"

# Diagnostic categories -> exit codes.  "config" covers bad or inconsistent
# settings, "io" missing/unreadable artifacts, "data" semantically unusable
# inputs, "training" a diverged optimization.
EXIT_CODES = {"config": 2, "io": 3, "data": 4, "training": 5, "internal": 1}


class CliError(Exception):
    """A failure with a diagnostic category mapped to an exit code."""

    def __init__(self, category: str, message: str) -> None:
        if category not in EXIT_CODES:
            raise ValueError(f"unknown error category {category!r}")
        super().__init__(message)
        self.category = category


# ---------------------------------------------------------------------------
# small file helpers: atomic writes, versioned CSVs
# ---------------------------------------------------------------------------


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, name: str, header: list[str], rows: list[list]) -> None:
    """Emit a CSV with the schema-version comment line, atomically."""
    buf = io.StringIO()
    buf.write(f"# {CSV_SCHEMA_VERSION} {name}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt_cell(v) for v in row])
    _atomic_write_text(path, buf.getvalue())


def read_csv(path: Path) -> list[dict[str, str]]:
    """Read a versioned CSV back as a list of string-valued records."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _history_rows(result: TrainResult) -> list[list]:
    return [[s.epoch, s.loss, s.val_ber, s.val_q_db] for s in result.history]


_HISTORY_HEADER = ["epoch", "loss", "val_ber", "val_q_db"]


# ---------------------------------------------------------------------------
# run-directory layout
# ---------------------------------------------------------------------------


def _power_tag(power: float) -> str:
    return f"{power:+g}"


def dataset_path(out: Path, power: float, role: str) -> Path:
    return out / "datasets" / f"power_{_power_tag(power)}_{role}.ds"


def model_path(out: Path, architecture: str, power: float) -> Path:
    return out / "models" / architecture / f"power_{_power_tag(power)}.wt"


def _archs(cfg: ExperimentConfig) -> list[str]:
    return ["bilstm-cnn", "deep-cnn"] if cfg.architecture == "both" else [cfg.architecture]


def _code_version() -> str:
    try:
        from importlib.metadata import version

        return version("coheq")
    except Exception:  # pragma: no cover - metadata missing in odd installs
        return "unknown"


def _manifest_append(out: Path, record: dict) -> None:
    path = out / "manifest.json"
    entries = []
    if path.exists():
        entries = json.loads(path.read_text(encoding="utf-8"))
    entries.append(record)
    _atomic_write_text(path, json.dumps(entries, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# shared loading helpers
# ---------------------------------------------------------------------------


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise CliError("io", f"{path} not found; {hint}")
    return path


def _load_sigma(out: Path) -> float:
    path = _require(out / "sigma.json", "run `coheq generate` first")
    return float(json.loads(path.read_text(encoding="utf-8"))["noise_sigma"])


def _load_dataset_checked(path: Path, cfg: ExperimentConfig) -> LinkDataset:
    ds = load_dataset(_require(path, "run `coheq generate` first"))
    if ds.n_symbols <= 2 * cfg.edge_margin:
        raise CliError(
            "data",
            f"{path} holds {ds.n_symbols} symbols, none interior to the "
            f"{cfg.edge_margin}-symbol edge margin",
        )
    return ds


def _load_power_datasets(
    out: Path, cfg: ExperimentConfig
) -> dict[float, tuple[LinkDataset, LinkDataset]]:
    return {
        p: (
            _load_dataset_checked(dataset_path(out, p, "train"), cfg),
            _load_dataset_checked(dataset_path(out, p, "val"), cfg),
        )
        for p in cfg.powers_dbm
    }


def _load_float_model(path: Path) -> EqualizerModel:
    model = load_model(path)
    if isinstance(model, FixedPointModel):
        raise CliError("config", f"{path} holds an integer model; a float model is required")
    return model


def _primary_data(out: Path, cfg: ExperimentConfig):
    primary = pipeline.primary_power(cfg.powers_dbm)
    train_ds = _load_dataset_checked(dataset_path(out, primary, "train"), cfg)
    val_ds = _load_dataset_checked(dataset_path(out, primary, "val"), cfg)
    return primary, pipeline.build_equalizer_dataset(train_ds, val_ds, margin=cfg.edge_margin)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, out: Path, args) -> None:
    """Simulate every launch power and write the dataset containers."""
    powers = cfg.powers_dbm
    calib_idx = powers.index(cfg.noise_calib_power_dbm)
    calib_seed = pipeline.frame_seed(cfg.seed, calib_idx, "val")
    sigma_path = out / "sigma.json"

    calib_frame = None
    if sigma_path.exists() and not args.force:
        sigma = _load_sigma(out)
        log.info("reusing calibrated noise sigma %.3e from %s", sigma, sigma_path)
    else:
        log.info("calibrating receiver noise at %+g dBm (target Q %.2f dB)",
                 cfg.noise_calib_power_dbm, cfg.noise_target_q_db)
        tx, wave = pipeline.simulate_frame(
            cfg, cfg.noise_calib_power_dbm, cfg.val_symbols, calib_seed
        )
        calib_frame = (tx, wave)
        sigma = pipeline.calibrate_noise_sigma(
            wave, tx, cfg,
            target_q_db=cfg.noise_target_q_db,
            seed=int(pipeline.derive_seeds(calib_seed)[pipeline.SEED_RX_NOISE]),
            margin=cfg.edge_margin,
        )
        _atomic_write_text(sigma_path, json.dumps({
            "noise_sigma": sigma,
            "target_q_db": cfg.noise_target_q_db,
            "calib_power_dbm": cfg.noise_calib_power_dbm,
        }, indent=2, sort_keys=True) + "\n")

    for i, power in enumerate(powers):
        for role, n_symbols in (("train", cfg.train_symbols), ("val", cfg.val_symbols)):
            path = dataset_path(out, power, role)
            if path.exists() and not args.force:
                log.info("skipping existing %s", path)
                continue
            seed = pipeline.frame_seed(cfg.seed, i, role)
            reuse = seed == calib_seed and power == cfg.noise_calib_power_dbm
            log.info("simulating %+g dBm %s frame (%d symbols)", power, role, n_symbols)
            ds = pipeline.make_dataset(
                cfg, power, n_symbols, seed, sigma,
                simulated=calib_frame if reuse else None,
            )
            path.parent.mkdir(parents=True, exist_ok=True)
            save_dataset(ds, path)


def cmd_baselines(cfg: ExperimentConfig, out: Path, args) -> None:
    """Score the linear and back-propagation receivers on every power."""
    rows, jsonl, xi_rows = [], [], []
    for power in cfg.powers_dbm:
        ds = _load_dataset_checked(dataset_path(out, power, "val"), cfg)
        base = pipeline.baseline_reports(ds, cfg)
        for method, ber, xi in (
            ("cdc", base.cdc_ber, None),
            ("dbp-1stps", base.dbp_ber, base.dbp_xi),
        ):
            report = report_from_ber(ber)
            rows.append([power, method, ber, report.q_db, xi])
            record = {"power_dbm": power, "method": method}
            record.update(json.loads(report.to_json_line()))
            jsonl.append(json.dumps(record, sort_keys=True))
        xi_rows.extend([power, xi, q] for xi, q in base.xi_curve)
    write_csv(out / "baselines.csv", "baselines",
              ["power_dbm", "method", "ber", "q_db", "xi"], rows)
    _atomic_write_text(out / "baselines.jsonl", "\n".join(jsonl) + "\n")
    write_csv(out / "xi_curves.csv", "xi_curves", ["power_dbm", "xi", "q_db"], xi_rows)


def _summary_rows(out: Path) -> list[dict[str, str]]:
    path = out / "train_summary.csv"
    return read_csv(path) if path.exists() else []


_SUMMARY_HEADER = [
    "architecture", "power_dbm", "q_db", "val_ber", "epochs", "best_epoch",
    "warm_started_from", "wall_s",
]


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> None:
    """Train each configured architecture over the power grid."""
    existing = _summary_rows(out)
    datasets = None
    for arch in _archs(cfg):
        done = (
            all(model_path(out, arch, p).exists() for p in cfg.powers_dbm)
            and sum(r["architecture"] == arch for r in existing) == len(cfg.powers_dbm)
        )
        if done and not args.force:
            log.info("%s already trained at every power; skipping", arch)
            continue
        if datasets is None:
            datasets = _load_power_datasets(out, cfg)
        entries = pipeline.train_power_sweep(cfg, arch, datasets)
        for e in entries:
            path = model_path(out, arch, e.power_dbm)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_model(e.model, path)
            write_csv(
                out / "convergence" / arch / f"power_{_power_tag(e.power_dbm)}.csv",
                "convergence", _HISTORY_HEADER, _history_rows(e.result),
            )
        existing = [r for r in existing if r["architecture"] != arch]
        existing.extend(
            {
                "architecture": arch,
                "power_dbm": _fmt_cell(float(e.power_dbm)),
                "q_db": _fmt_cell(e.q_db),
                "val_ber": _fmt_cell(e.val_ber),
                "epochs": str(e.result.epochs_run),
                "best_epoch": str(e.result.best_epoch),
                "warm_started_from": _fmt_cell(e.warm_started_from),
                "wall_s": _fmt_cell(e.wall_s),
            }
            for e in entries
        )
        existing.sort(key=lambda r: (r["architecture"], float(r["power_dbm"])))
        write_csv(out / "train_summary.csv", "train_summary", _SUMMARY_HEADER,
                  [[r[k] for k in _SUMMARY_HEADER] for r in existing])


_CELLS_HEADER = [
    "architecture", "family", "level", "retrained", "q_db",
    "boundary_tanh", "boundary_sigmoid", "epochs", "wall_s",
]


def _cell_row(arch: str, cell: pipeline.SweepCell) -> list:
    return [
        arch, cell.family, cell.level, cell.retrained, cell.q_db,
        cell.boundary_tanh, cell.boundary_sigmoid,
        cell.result.epochs_run if cell.result is not None else 0,
        cell.wall_s,
    ]


def _completed_cells(rows: list[dict[str, str]]) -> set[tuple]:
    return {
        (r["architecture"], r["family"], int(r["level"]), r["retrained"] == "true")
        for r in rows
    }


def _write_cells(path: Path, rows: list[dict[str, str]], new_rows: list[list]) -> list[dict]:
    records = rows + [dict(zip(_CELLS_HEADER, map(_fmt_cell, row))) for row in new_rows]
    records.sort(key=lambda r: (r["architecture"], r["family"], int(r["level"]),
                                r["retrained"]))
    write_csv(path, "approx_cells", _CELLS_HEADER,
              [[r[k] for k in _CELLS_HEADER] for r in records])
    return records


def cmd_sweep_approx(cfg: ExperimentConfig, out: Path, args) -> None:
    """Score the whole approximation grid, resuming any completed cells."""
    cells_path = out / "sweep" / "cells.csv"
    rows = read_csv(cells_path) if cells_path.exists() else []
    done = _completed_cells(rows)
    retrain = not args.no_retrain
    grid = [("taylor", o) for o in cfg.taylor_orders]
    grid += [("pwl", s) for s in cfg.pwl_segments]
    grid += [("lut", b) for b in cfg.lut_bits]
    primary_data = None
    for arch in _archs(cfg):
        pending = [
            (family, level) for family, level in grid
            if (arch, family, level, False) not in done
            or (retrain and (arch, family, level, True) not in done)
        ]
        if not pending:
            log.info("%s: approximation grid already complete; skipping", arch)
            continue
        if primary_data is None:
            primary_data = _primary_data(out, cfg)
        primary, data = primary_data
        model = _load_float_model(_require(
            model_path(out, arch, primary), "run `coheq train` first"
        ))

        def run_cell(spec, model=model, data=data):
            family, level = spec
            return pipeline.sweep_cell(model, data, cfg, family, level, retrain=retrain)

        log.info("%s: %d grid cells to run (workers=%d)", arch, len(pending), cfg.workers)
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                futures = {pool.submit(run_cell, spec): spec for spec in pending}
                for future in as_completed(futures):
                    rows = _finish_cell(out, arch, futures[future], future.result(),
                                        rows, done, cells_path)
        else:
            for spec in pending:
                rows = _finish_cell(out, arch, spec, run_cell(spec), rows, done, cells_path)


def _finish_cell(out, arch, spec, cells, rows, done, cells_path):
    family, level = spec
    new_rows = []
    for cell in cells:
        key = (arch, family, level, cell.retrained)
        if key in done:
            continue
        done.add(key)
        new_rows.append(_cell_row(arch, cell))
        if cell.result is not None:
            write_csv(
                out / "sweep" / arch / "convergence" / f"{family}-{level}.csv",
                "convergence", _HISTORY_HEADER, _history_rows(cell.result),
            )
    return _write_cells(cells_path, rows, new_rows)


def retrained_model_path(out: Path, arch: str, family: str, level: int) -> Path:
    return out / "retrained" / f"{arch}-{family}-{level}.wt"


def cmd_retrain(cfg: ExperimentConfig, out: Path, args) -> None:
    """Approximation-aware fine-tuning of the trained model for one cell."""
    family, level = args.family, args.level
    retrain_csv = out / "retrained" / "retrained.csv"
    rows = read_csv(retrain_csv) if retrain_csv.exists() else []
    for arch in _archs(cfg):
        target = retrained_model_path(out, arch, family, level)
        if target.exists() and not args.force:
            log.info("%s already exists; skipping", target)
            continue
        primary, data = _primary_data(out, cfg)
        model = _load_float_model(_require(
            model_path(out, arch, primary), "run `coheq train` first"
        ))
        cells, adapted = pipeline.sweep_cell(
            model, data, cfg, family, level, retrain=True, return_model=True,
        )
        target.parent.mkdir(parents=True, exist_ok=True)
        save_model(adapted, target)
        write_csv(
            out / "retrained" / "convergence" / f"{arch}-{family}-{level}.csv",
            "convergence", _HISTORY_HEADER, _history_rows(cells[-1].result),
        )
        rows = [
            r for r in rows
            if (r["architecture"], r["family"], int(r["level"])) != (arch, family, level)
        ]
        rows += [dict(zip(_CELLS_HEADER, map(_fmt_cell, _cell_row(arch, c)))) for c in cells]
        rows.sort(key=lambda r: (r["architecture"], r["family"], int(r["level"]),
                                 r["retrained"]))
        write_csv(retrain_csv, "approx_cells", _CELLS_HEADER,
                  [[r[k] for k in _CELLS_HEADER] for r in rows])


def cmd_quantize(cfg: ExperimentConfig, out: Path, args) -> None:
    """Convert a trained model to int32 fixed point and report Q parity."""
    if not 0 < args.frac_bits < 31:
        raise CliError("config", f"--frac-bits must lie in 1..30, got {args.frac_bits}")
    quant_rows = []
    primary, data = _primary_data(out, cfg)
    for arch in _archs(cfg):
        if args.model is not None:
            source = Path(args.model)
        else:
            source = retrained_model_path(out, arch, "pwl", 3)
            if not source.exists():
                source = model_path(out, arch, primary)
                log.info("no retrained pwl-3 model for %s; quantizing the float model", arch)
        model = _load_float_model(_require(source, "run `coheq train`/`coheq retrain` first"))
        fixed = quantize_int32(model, args.frac_bits)
        q_float = evaluate_model(model, data.x_val, data.y_val).q_db
        q_fixed = evaluate_model(fixed, data.x_val, data.y_val).q_db
        target = out / "quantized" / f"{arch}-int32.wt"
        target.parent.mkdir(parents=True, exist_ok=True)
        save_model(fixed, target)
        log.info("%s: float %.3f dB, int32(frac=%d) %.3f dB", arch, q_float,
                 args.frac_bits, q_fixed)
        quant_rows.append([
            arch, str(source.relative_to(out) if source.is_relative_to(out) else source),
            args.frac_bits, q_float, q_fixed, q_fixed - q_float,
        ])
    write_csv(out / "quantize.csv", "quantize",
              ["architecture", "source", "frac_bits", "q_float_db", "q_fixed_db", "delta_db"],
              quant_rows)


def cmd_report(cfg: ExperimentConfig, out: Path, args) -> None:
    """Aggregate run artifacts into figure-ready CSVs."""
    report_dir = out / "report"

    power_rows = []
    baselines = out / "baselines.csv"
    if baselines.exists():
        power_rows += [
            [float(r["power_dbm"]), r["method"], float(r["q_db"])]
            for r in read_csv(baselines)
        ]
    summary = out / "train_summary.csv"
    if summary.exists():
        power_rows += [
            [float(r["power_dbm"]), r["architecture"], float(r["q_db"])]
            for r in read_csv(summary)
        ]
    if not power_rows:
        raise CliError(
            "io", f"nothing to report in {out}: run `coheq baselines` or `coheq train` first"
        )
    power_rows.sort(key=lambda r: (r[1], r[0]))
    write_csv(report_dir / "q_vs_power.csv", "q_vs_power",
              ["power_dbm", "method", "q_db"], power_rows)

    cells_sources = [out / "sweep" / "cells.csv", out / "retrained" / "retrained.csv"]
    cell_records: dict[tuple, list] = {}
    for source in cells_sources:
        if not source.exists():
            continue
        for r in read_csv(source):
            key = (r["architecture"], r["family"], int(r["level"]), r["retrained"])
            cell_records[key] = r
    if cell_records:
        archs = sorted({k[0] for k in cell_records})
        chosen = "bilstm-cnn" if "bilstm-cnn" in archs else archs[0]
        if len(archs) > 1:
            log.info("q_vs_approx.csv reports the %s sweep (grids also ran: %s)",
                     chosen, ", ".join(a for a in archs if a != chosen))
        approx_rows = [
            [k[1], k[2], k[3], float(r["q_db"])]
            for k, r in sorted(cell_records.items())
            if k[0] == chosen
        ]
        write_csv(report_dir / "q_vs_approx.csv", "q_vs_approx",
                  ["family", "level", "retrained", "q_db"], approx_rows)
    else:
        log.info("no approximation sweep results; q_vs_approx.csv not written")

    counted = {
        "bilstm_cnn": count_real_multipliers(build_bilstm_cnn(0)),
        "deep_cnn": count_real_multipliers(build_deep_cnn(0)),
        "cdc": None,
    }
    complexity_rows = []
    for report in resource_table_report(load_hw_tables()):
        row = report.row
        count = counted[row.design]
        derived = {c.name: c for c in report.cells}
        complexity_rows.append([
            row.design, row.table,
            count.total if count else None,
            count.n_output_symbols if count else None,
            count.per_symbol if count else None,
            row.clock_mhz, row.max_utilization,
            derived["throughput_gbps"].computed,
            derived["n_fpga_200g"].computed,
            derived["n_fpga_400g_dual"].computed,
            derived["n_fpga_400g_56gbd"].computed,
            row.throughput_gbps, row.n_fpga_200g,
            row.n_fpga_400g_dual, row.n_fpga_400g_56gbd,
        ])
    write_csv(report_dir / "complexity.csv", "complexity", [
        "design", "table", "n_real_mults_per_window", "n_output_symbols",
        "n_real_mults_per_symbol", "clock_mhz", "max_utilization",
        "throughput_gbps", "n_fpga_200g", "n_fpga_400g_dual", "n_fpga_400g_56gbd",
        "published_throughput_gbps", "published_n_fpga_200g",
        "published_n_fpga_400g_dual", "published_n_fpga_400g_56gbd",
    ], complexity_rows)


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="PATH", help="experiment config file (INI)")
    sub.add_argument("--output-dir", metavar="DIR",
                     help="run directory (overrides config and COHEQ_OUTPUT_DIR)")
    sub.add_argument("--workers", type=int, metavar="N",
                     help="worker pool size (overrides config and COHEQ_WORKERS)")
    sub.add_argument("--arch", choices=["bilstm-cnn", "deep-cnn", "both"],
                     help="override the configured architecture selection")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coheq",
        description="Coherent-link neural equalization experiments: dataset "
                    "generation, training, activation-approximation sweeps, "
                    "fixed-point conversion, and figure-ready reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate transmission and write datasets")
    p.add_argument("--force", action="store_true", help="regenerate existing files")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("baselines", help="score CDC and DBP receivers per power")
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("train", help="train equalizers over the power grid")
    p.add_argument("--force", action="store_true", help="retrain even if models exist")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("retrain", help="approximation-aware fine-tuning of one cell")
    p.add_argument("--family", required=True, choices=["taylor", "pwl", "lut"])
    p.add_argument("--level", required=True, type=int,
                   help="polynomial order / segment count / table address bits")
    p.add_argument("--force", action="store_true", help="redo an existing cell")
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("sweep-approx", help="score the full approximation grid")
    p.add_argument("--no-retrain", action="store_true",
                   help="frozen-weight scores only, skip per-cell retraining")
    p.set_defaults(func=cmd_sweep_approx)

    p = sub.add_parser("quantize", help="convert a model to int32 fixed point")
    p.add_argument("--frac-bits", type=int, default=16, metavar="N",
                   help="fractional bits of the fixed-point format (default 16)")
    p.add_argument("--model", metavar="PATH",
                   help="explicit model file (default: retrained pwl-3, else float)")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("report", help="emit figure-ready CSVs from run artifacts")
    p.set_defaults(func=cmd_report)

    for p in sub.choices.values():
        _add_common(p)
    return parser


def _effective_config(args) -> ExperimentConfig:
    try:
        cfg = load_config(args.config) if args.config else default_config()
        updates = {}
        if os.environ.get("COHEQ_OUTPUT_DIR"):
            updates["output_dir"] = os.environ["COHEQ_OUTPUT_DIR"]
        if os.environ.get("COHEQ_WORKERS"):
            updates["workers"] = int(os.environ["COHEQ_WORKERS"])
        if args.output_dir:
            updates["output_dir"] = args.output_dir
        if args.workers is not None:
            updates["workers"] = args.workers
        if args.arch is not None:
            updates["architecture"] = args.arch
        return dataclasses.replace(cfg, **updates) if updates else cfg
    except FileNotFoundError as exc:
        raise CliError("io", str(exc)) from exc
    except (ValueError, KeyError) as exc:
        raise CliError("config", str(exc)) from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                            format="%(levelname).1s %(message)s")
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        cfg = _effective_config(args)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        config_text = dumps_config(cfg)
        _atomic_write_text(out / "config.ini", config_text)
        args.func(cfg, out, args)
        _manifest_append(out, {
            "command": args.command,
            "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
            "code_version": _code_version(),
            "seeds": {"experiment": cfg.seed, "train": cfg.train.seed},
            "started_utc": started.isoformat(timespec="seconds"),
            "wall_s": round(time.perf_counter() - t0, 3),
            "argv": list(sys.argv[1:] if argv is None else argv),
        })
        return 0
    except CliError as exc:
        print(f"coheq: error [{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.category]
    except TrainingDiverged as exc:
        print(f"coheq: error [training]: {exc}", file=sys.stderr)
        return EXIT_CODES["training"]
    except FileNotFoundError as exc:
        print(f"coheq: error [io]: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]
    except (ValueError, KeyError, struct.error) as exc:
        print(f"coheq: error [data]: {exc}", file=sys.stderr)
        return EXIT_CODES["data"]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
