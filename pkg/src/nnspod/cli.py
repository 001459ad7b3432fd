"""``nnspod-reduce`` command line: generate, reduce, compare."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import snapshots as store
from .fom import SolverError, generate_deforming_pulse, simulate_advection
from .neural import TrainingError
from .nnspod import run_algorithm1
from .pod import format_threshold, modes_at, pod
from .shift import shift_all

log = logging.getLogger("nnspod")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_THRESHOLD, EXIT_TRAINING = 0, 2, 3, 4, 5
METHODS = ("pod", "spod", "nnspod")


class UsageError(Exception):
    pass


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _claim(paths, force: bool):
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise UsageError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_generate(cfg: dict, out: Path, force: bool, kind: str | None = None) -> int:
    kind = kind or cfg["fom"]["kind"]
    cfg["fom"]["kind"] = kind
    snap = out / "snapshots.snap"
    _claim([snap, out / "provenance.json"], force)
    grid = cfgmod.build_grid(cfg)
    if kind == "advection":
        m = simulate_advection(cfgmod.build_fom(cfg))
    elif kind == "deforming":
        m = generate_deforming_pulse(grid, cfg["fom"]["n_steps"])
    else:
        m = store.ingest_csv(cfg["fom"]["source"], grid)
    out.mkdir(parents=True, exist_ok=True)
    store.save(m, snap)
    provenance = {
        "kind": kind,
        "n_cells": m.n_cells,
        "n_snapshots": m.n_snapshots,
        "params_first": float(m.params[0]),
        "params_last": float(m.params[-1]),
        "sha256": _sha256(snap),
        "config": cfg,
    }
    (out / "provenance.json").write_text(_json(provenance))
    (out / "config.resolved.json").write_text(cfgmod.dumps(cfg))
    print(f"wrote {snap} (N_h={m.n_cells}, N_s={m.n_snapshots})")
    return EXIT_OK


def _write_energy(path, energy):
    store.write_series_csv(path, energy, header=("mode", "cumulative_energy"))


def cmd_reduce(cfg: dict, method: str, out: Path, force: bool) -> int:
    if method not in METHODS:
        raise UsageError(f"--method must be one of {', '.join(METHODS)}")
    snap_path = cfgmod.default_snapshot_path(cfg)
    if not snap_path.exists():
        raise UsageError(f"snapshot file {snap_path} does not exist; run 'generate' first")
    targets = [out / "report.json", out / f"sv_{method}.csv", out / f"energy_{method}.csv"]
    if method == "nnspod":
        targets += [out / n for n in ("interp.json", "shift.json", "shifted.snap", "sv_before.csv",
                                      "sv_after.csv", "loss_interp.csv", "loss_shift.csv")]
    _claim(targets, force)
    m = store.load(snap_path)
    thresholds = cfg["pod"]["thresholds"]
    report = {
        "method": method,
        "n_cells": m.n_cells,
        "n_snapshots": m.n_snapshots,
        "snapshots_sha256": _sha256(snap_path),
        "seed": cfg["seed"],
        "thresholds": [format_threshold(t) for t in thresholds],
    }
    nn = None
    if method == "pod":
        result = pod(m)
    elif method == "spod":
        spec = cfgmod.build_shift(cfg)
        result = pod(shift_all(m, spec))
        report["t_ref"] = spec.t_ref
        report["field"] = spec.field.to_dict()
    else:
        nn = run_algorithm1(m, cfgmod.build_nnspod(cfg))
        result = nn.pod_after
    out.mkdir(parents=True, exist_ok=True)
    store.write_series_csv(out / f"sv_{method}.csv", result.singular_values, header=("mode", "singular_value"))
    _write_energy(out / f"energy_{method}.csv", result.energy)
    report["singular_values_file"] = f"sv_{method}.csv"
    report["energy_file"] = f"energy_{method}.csv"
    report["modes_at"] = modes_at(result, thresholds)
    report["first_mode_energy"] = float(result.energy[0])
    if nn is not None:
        nn.interp_net.save(out / "interp.json")
        nn.shift_net.save(out / "shift.json")
        store.save(nn.shifted_matrix, out / "shifted.snap")
        store.write_series_csv(out / "sv_before.csv", nn.pod_before.singular_values, header=("mode", "singular_value"))
        store.write_series_csv(out / "sv_after.csv", nn.pod_after.singular_values, header=("mode", "singular_value"))
        store.write_series_csv(out / "loss_interp.csv", nn.interp_curve, header=("epoch", "loss"))
        store.write_series_csv(out / "loss_shift.csv", nn.shift_curve, header=("epoch", "loss"))
        fixed = [1e-1, 1e-2, 1e-3]
        report.update({
            "chosen_reference": nn.chosen_reference,
            "epsilon_svd": nn.epsilon,
            "eps_svd_target": cfg["nnspod"]["eps_svd"],
            "converged": nn.converged,
            "candidate_errors": {str(k): v for k, v in nn.candidate_errors.items()},
            "interp_final_loss": float(nn.interp_curve.min()),
            "shift_final_loss": float(nn.shift_curve.min()),
            "interp_epochs": int(nn.interp_curve.size),
            "shift_epochs": int(nn.shift_curve.size),
            "modes_before": modes_at(nn.pod_before, fixed),
            "modes_after": modes_at(nn.pod_after, fixed),
            "first_mode_energy_before": float(nn.pod_before.energy[0]),
            "warnings": nn.warnings,
        })
    (out / "report.json").write_text(_json(report))
    (out / "config.resolved.json").write_text(cfgmod.dumps(cfg))
    summary = ", ".join(f"{k}: {v}" for k, v in report["modes_at"].items())
    print(f"{method}: modes_at {summary}")
    missing = [k for k, v in report["modes_at"].items() if v is None]
    if missing:
        print(f"threshold(s) unreachable: {', '.join(missing)}", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


def _find_reports(root: Path):
    found = []
    for p in [root / "report.json", *sorted(root.glob("*/report.json"))]:
        if p.is_file():
            found.append(p)
    return found


def cmd_compare(root: Path, force: bool, out: Path | None = None) -> int:
    out = out or root
    reports = _find_reports(root)
    if len(reports) < 2:
        raise UsageError(f"compare needs at least two reports under {root}, found {len(reports)}")
    loaded = []
    for p in reports:
        rep = json.loads(p.read_text())
        # copy the decimal strings verbatim so merged cells match their source
        with open(p.parent / rep["singular_values_file"], newline="") as fh:
            raw = [r[1] for r in csv.reader(fh)][1:]
        loaded.append((rep, raw))
    counts = {rep["n_snapshots"] for rep, _ in loaded}
    if len(counts) != 1:
        raise UsageError(f"reports disagree on the snapshot count: {sorted(counts)}")
    loaded.sort(key=lambda item: METHODS.index(item[0]["method"]) if item[0]["method"] in METHODS else 99)
    _claim([out / "comparison.csv", out / "summary.txt"], force)
    n_rows = max(len(raw) for _, raw in loaded)
    header = ["mode"] + [f"sigma_{rep['method']}" for rep, _ in loaded]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n_rows):
            w.writerow([i + 1] + [raw[i] if i < len(raw) else "" for _, raw in loaded])
    lines = []
    for rep, _ in loaded:
        ma = ", ".join(f"{k}={v}" for k, v in rep["modes_at"].items())
        lines.append(f"{rep['method']}: {ma}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nnspod-reduce", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        sp.add_argument("--config", required=needs_config, help="JSON run configuration")
        sp.add_argument("--output", help="output directory (overrides output_dir)")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        sp.add_argument("--seed", type=int, help="override the configured seed")

    g = sub.add_parser("generate", help="produce snapshots.snap")
    common(g)
    g.add_argument("--kind", choices=("advection", "deforming", "ingest"))
    r = sub.add_parser("reduce", help="POD, shifted POD or NNsPOD of a snapshot set")
    common(r)
    r.add_argument("--method", required=True, choices=METHODS)
    c = sub.add_parser("compare", help="merge singular-value series of several reports")
    c.add_argument("directory", help="directory holding report.json files (or their subdirectories)")
    c.add_argument("--output")
    c.add_argument("--force", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "compare":
            return cmd_compare(Path(args.directory), args.force, Path(args.output) if args.output else None)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = cfgmod.load(args.config, overrides)
        if args.command == "generate":
            if args.output:
                cfg["output_dir"] = args.output
            return cmd_generate(cfg, Path(cfg["output_dir"]), args.force, args.kind)
        out = Path(args.output) if args.output else Path(cfg["output_dir"]) / args.method
        if cfg["snapshots"] is None and args.output:
            # fall back to a snapshot file beside or above the requested output
            for cand in (cfgmod.default_snapshot_path(cfg), out / "snapshots.snap", out.parent / "snapshots.snap"):
                if cand.exists():
                    cfg["snapshots"] = str(cand)
                    break
        return cmd_reduce(cfg, args.method, out, args.force)
    except (cfgmod.ConfigError, UsageError, store.SnapshotFormatError, store.IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except TrainingError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
