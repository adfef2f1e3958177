"""Command-line front end.

Every subcommand accepts ``--config``, ``--seed``, ``--out`` and ``--threads``.
Exit codes: 0 ok, 1 other library error, 2 configuration, 3 unreadable or
malformed file, 4 grid mismatch, 5 missing trained state.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .classical import OrientationSet, TkdConfig, cosmos_invert, tkd_invert
from .config import ExperimentConfig, config_hash, load_config
from .dipole import Orientation, cone_mask, dipole_kernel, forward_field
from .errors import (
    ConfigError,
    DegenerateOrientations,
    EmptyDataset,
    GridMismatch,
    InsufficientOrientations,
    MissingCheckpoint,
    QSMError,
    ShapeOutOfBounds,
    VolumeFormatError,
)
from .grid import Volume3D
from .io import read_mask, read_volume, write_mask, write_volume
from .metrics import CSV_COLUMNS, evaluate
from .phantom import build_phantom, orientation_sweep, synth_orientation_set
from .training import (
    HISTORY_COLUMNS,
    alternate_train,
    load_state,
    predicted_kernel,
    reconstruct,
    save_state,
)

log = logging.getLogger("qsm_inr.cli")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_FILE, EXIT_GRID, EXIT_STATE = 0, 1, 2, 3, 4, 5

_EXIT_MAP = (
    (ConfigError, EXIT_CONFIG),
    (InsufficientOrientations, EXIT_CONFIG),
    (DegenerateOrientations, EXIT_CONFIG),
    (ShapeOutOfBounds, EXIT_CONFIG),
    (EmptyDataset, EXIT_CONFIG),
    (VolumeFormatError, EXIT_FILE),
    (GridMismatch, EXIT_GRID),
    (MissingCheckpoint, EXIT_STATE),
)


def exit_code_for(exc: BaseException) -> int:
    for cls, code in _EXIT_MAP:
        if isinstance(exc, cls):
            return code
    return EXIT_ERROR


# ---------------------------------------------------------------- helpers

def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    update = {}
    if args.seed is not None:
        update["seed"] = args.seed
    if args.out is not None:
        update["out"] = args.out
    return cfg.model_copy(update=update) if update else cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_orientation(text: str) -> Orientation:
    try:
        vals = [float(v) for v in text.split(",")]
        if len(vals) != 3:
            raise ValueError
        return Orientation.from_vector(vals)
    except ValueError as exc:
        raise ConfigError(f"orientation {text!r} must be three comma-separated numbers") from exc


def _orientations(args, cfg: ExperimentConfig) -> list[Orientation]:
    if getattr(args, "orientation", None):
        return [_parse_orientation(t) for t in args.orientation]
    return cfg.orientation_list()


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _emit_csv(path: Path, header, rows):
    text = _csv_text(header, rows)
    path.write_text(text)
    sys.stdout.write(text)


def _load_mask(path, grid):
    if path is None:
        return None
    mgrid, mask = read_mask(path)
    if mgrid != grid:
        raise GridMismatch(f"mask grid {mgrid.dims} does not match volume grid {grid.dims}")
    return mask


def _write_metrics(out: Path, report, stem="metrics"):
    _write_json(out / f"{stem}.json", report.to_dict())
    _emit_csv(out / f"{stem}.csv", CSV_COLUMNS, [report.csv_row()])


def _figures(args) -> bool:
    return not args.no_figures


# ---------------------------------------------------------------- commands

def cmd_phantom(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    chi, mask = build_phantom(cfg.phantom_spec())
    write_volume(out / "chi.qsmv", chi)
    write_mask(out / "mask.qsmv", chi.grid, mask)
    _write_json(out / "config.json", json.loads(cfg.to_json()))
    if _figures(args):
        from .plotting import plot_slices

        plot_slices({"chi": chi.data, "mask": mask * float(np.abs(chi.data).max())},
                    out / "phantom.png")
    sys.stdout.write(f"chi,{out / 'chi.qsmv'}\nmask,{out / 'mask.qsmv'}\n")
    return EXIT_OK


def cmd_forward(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    if args.chi:
        chi = read_volume(args.chi)
    else:
        chi, _ = build_phantom(cfg.phantom_spec())
    mask = _load_mask(args.mask, chi.grid)
    orients = _orientations(args, cfg)
    oset = synth_orientation_set(chi, orients, cfg.noise_spec())
    manifest, rows = [], []
    for i, (o, f) in enumerate(oset.items):
        name = f"field_{i:02d}.qsmv"
        write_volume(out / name, f)
        manifest.append({"file": name, "orientation": list(o.b)})
        vals = f.data[mask] if mask is not None else f.data.ravel()
        rows.append([name, *o.b, float(np.sqrt(np.mean(vals**2)))])
    _write_json(out / "fields.json", manifest)
    _emit_csv(out / "fields.csv", ["file", "bx", "by", "bz", "rms"], rows)
    return EXIT_OK


def _reference_metrics(args, out: Path, chi_hat: Volume3D):
    if not args.ref:
        return None
    ref = read_volume(args.ref)
    if ref.grid != chi_hat.grid:
        raise GridMismatch(f"reference grid {ref.grid.dims} does not match {chi_hat.grid.dims}")
    mask = _load_mask(args.mask, ref.grid)
    report = evaluate(chi_hat, ref, mask)
    _write_metrics(out, report)
    return ref


def cmd_tkd(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    field = read_volume(args.field)
    orient = _orientations(args, cfg)[0]
    tcfg = TkdConfig(args.t if args.t is not None else cfg.tkd.t,
                     args.zero_fill or cfg.tkd.zero_fill)
    chi_hat = tkd_invert(field, dipole_kernel(field.grid, orient), tcfg)
    write_volume(out / "chi_tkd.qsmv", chi_hat)
    ref = _reference_metrics(args, out, chi_hat)
    if _figures(args):
        from .plotting import plot_slices

        vols = {"tkd": chi_hat.data} if ref is None else {"reference": ref.data, "tkd": chi_hat.data}
        plot_slices(vols, out / "tkd.png")
    return EXIT_OK


def _field_list(args, cfg):
    if args.manifest:
        try:
            entries = json.loads(Path(args.manifest).read_text())
        except OSError as exc:
            raise VolumeFormatError(f"cannot read manifest {args.manifest}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise VolumeFormatError(f"manifest {args.manifest} is not valid JSON") from exc
        base = Path(args.manifest).parent
        return [(Orientation.from_vector(e["orientation"]), read_volume(base / e["file"]))
                for e in entries]
    fields = [read_volume(p) for p in (args.field or [])]
    orients = _orientations(args, cfg)
    if len(orients) != len(fields):
        raise ConfigError(f"{len(fields)} field files but {len(orients)} orientations")
    return list(zip(orients, fields))


def cmd_cosmos(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    items = _field_list(args, cfg)
    damping = args.damping if args.damping is not None else cfg.cosmos.damping
    chi_hat = cosmos_invert(OrientationSet(tuple(items)), damping)
    write_volume(out / "chi_cosmos.qsmv", chi_hat)
    ref = _reference_metrics(args, out, chi_hat)
    if _figures(args):
        from .plotting import plot_slices

        vols = {"cosmos": chi_hat.data} if ref is None else {"reference": ref.data, "cosmos": chi_hat.data}
        plot_slices(vols, out / "cosmos.png")
    return EXIT_OK


def cmd_metrics(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    x, ref = read_volume(args.x), read_volume(args.ref)
    if x.grid != ref.grid:
        raise GridMismatch(f"grids differ: {x.grid.dims} vs {ref.grid.dims}")
    _write_metrics(out, evaluate(x, ref, _load_mask(args.mask, ref.grid)))
    return EXIT_OK


def cmd_kernel_export(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    grid = read_volume(args.like).grid if args.like else cfg.grid_spec()
    state = _require_state(args.checkpoint) if args.checkpoint else None
    t_cone = state.hp.t_cone if state is not None else cfg.hyperparams.t_cone
    rows = []
    for i, o in enumerate(_orientations(args, cfg)):
        d = dipole_kernel(grid, o)
        write_volume(out / f"kernel_{i:02d}.qsmv", Volume3D(grid, d.values))
        cone = cone_mask(d, t_cone)
        write_mask(out / f"cone_{i:02d}.qsmv", grid, cone.flags)
        row = [i, *o.b, cone.fraction]
        if state is not None:
            d_hat = predicted_kernel(state, grid, o)
            write_volume(out / f"kernel_hat_{i:02d}.qsmv", Volume3D(grid, d_hat.values))
            row.append(float(np.mean(np.abs(d_hat.values[cone.flags]))))
            if _figures(args):
                from .plotting import plot_kernel

                plot_kernel(d.values, d_hat.values, out / f"kernel_{i:02d}.png")
        rows.append(row)
    header = ["index", "bx", "by", "bz", "cone_fraction"]
    if state is not None:
        header.append("cone_mean_abs_hat")
    _emit_csv(out / "kernels.csv", header, rows)
    return EXIT_OK


def _require_state(path):
    if path is None or not Path(path).is_file():
        raise MissingCheckpoint(f"checkpoint {path} not found; run `train` first")
    return load_state(path)


# ---------------------------------------------------------------- training sweep

def _combo_name(combo: dict) -> str:
    if not combo:
        return "run"
    return "_".join(f"{k}-{v:g}" for k, v in combo.items())


def _combo_payload(cfg: ExperimentConfig, combo: dict) -> dict:
    hp = cfg.hyperparams.build().with_weights(**combo)
    return {
        "grid": cfg.grid.model_dump(mode="json"),
        "phantom": cfg.phantom.model_dump(mode="json"),
        "noise": cfg.noise.model_dump(mode="json"),
        "orientations": [list(b) for b in cfg.orientations],
        "hyperparams": hp.to_dict(),
        "train": cfg.train.model_dump(mode="json"),
        "seed": cfg.seed,
    }


def _training_data(cfg: ExperimentConfig):
    chi, mask = build_phantom(cfg.phantom_spec())
    oset = synth_orientation_set(chi, cfg.orientation_list(), cfg.noise_spec())
    data = [(f, chi, o) for o, f in oset.items]
    return chi, mask, data


def _completed(final: Path, digest: str) -> bool:
    try:
        meta = json.loads((final / "config.json").read_text())
    except (OSError, json.JSONDecodeError):
        return False
    return meta.get("hash") == digest and (final / "metrics.json").is_file()


def _train_one(cfg, combo, out: Path, chi, mask, data, figures: bool):
    name = _combo_name(combo)
    payload = _combo_payload(cfg, combo)
    digest = config_hash(payload)
    final = out / name
    if _completed(final, digest):
        log.info("%s: complete with matching config hash, skipped", name)
        return name, json.loads((final / "metrics.json").read_text()), False

    hp = cfg.hyperparams.build().with_weights(**combo)
    tmp = out / f".tmp-{name}-{os.getpid()}-{threading.get_ident()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)

    state = alternate_train(data, hp, cfg.train.steps, cfg.seed, cfg.train.build())
    field0, _, o0 = data[0]
    chi_hat = reconstruct(state, field0, o0)
    report = evaluate(chi_hat, chi, mask)
    baseline = tkd_invert(field0, dipole_kernel(chi.grid, o0), TkdConfig(hp.t_tkd))
    d_hat = predicted_kernel(state, chi.grid, o0)

    save_state(tmp / "checkpoint.qsmck", state, {"config_hash": digest})
    rows = [[r[c] for c in HISTORY_COLUMNS] for r in state.history]
    (tmp / "loss.csv").write_text(_csv_text(HISTORY_COLUMNS, rows))
    _write_json(tmp / "metrics.json", report.to_dict())
    _write_json(tmp / "baseline_tkd.json", evaluate(baseline, chi, mask).to_dict())
    write_volume(tmp / "kernel_hat.qsmv", Volume3D(chi.grid, d_hat.values))
    write_volume(tmp / "chi_hat.qsmv", chi_hat)
    if figures:
        from .plotting import plot_kernel, plot_loss_curves, plot_slices

        plot_loss_curves(state.history, tmp / "loss.png")
        plot_slices({"reference": chi.data, "tkd": baseline.data, "learned": chi_hat.data},
                    tmp / "slices.png")
        plot_kernel(dipole_kernel(chi.grid, o0).values, d_hat.values, tmp / "kernel.png")
    _write_json(tmp / "config.json", {"hash": digest, "config": payload})

    # publish atomically; a concurrent worker may have finished the same combination
    if final.exists():
        if _completed(final, digest):
            shutil.rmtree(tmp)
            return name, report.to_dict(), True
        shutil.rmtree(final)
    try:
        os.rename(tmp, final)
    except OSError:
        if not _completed(final, digest):
            raise
        shutil.rmtree(tmp)
    return name, report.to_dict(), True


SUMMARY_COLUMNS = ("name", "w_model", "w_grad", "w_dipole", "w_voxel") + CSV_COLUMNS


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    chi, mask, data = _training_data(cfg)
    combos = cfg.sweep.expand()
    names = [_combo_name(c) for c in combos]
    if len(set(names)) != len(names):
        raise ConfigError("sweep.combinations contains duplicate entries")
    figures = _figures(args)

    def run(combo):
        return _train_one(cfg, combo, out, chi, mask, data, figures)

    workers = max(1, int(args.threads or 1))
    if workers == 1:
        results = [run(c) for c in combos]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, combos))

    summary = []
    for combo, (name, metrics, trained) in zip(combos, results):
        log.info("%s: %s", name, "trained" if trained else "skipped")
        hp = cfg.hyperparams.build().with_weights(**combo)
        row = {"name": name, "w_model": hp.w_model, "w_grad": hp.w_grad,
               "w_dipole": hp.w_dipole, "w_voxel": hp.w_voxel}
        row.update({k: metrics[k] for k in CSV_COLUMNS})
        summary.append(row)
    _emit_csv(out / "sweep_summary.csv", SUMMARY_COLUMNS,
              [[r[c] for c in SUMMARY_COLUMNS] for r in summary])
    best = max(summary, key=lambda r: r["ssim"])
    _write_json(out / "sweep_summary.json", {"rows": summary, "best_by_ssim": best["name"]})
    if figures and len(summary) > 1:
        from .plotting import plot_sweep

        plot_sweep(summary, out / "sweep.png")
    return EXIT_OK


ORIENTATION_COLUMNS = ("bx", "by", "bz", "hfen", "nrmse", "ssim", "psnr")


def orientation_rows(state, cfg: ExperimentConfig):
    chi, mask = build_phantom(cfg.phantom_spec())
    osw = cfg.orientation_sweep
    orients = orientation_sweep(osw.n, osw.cap_deg, osw.seed)
    oset = synth_orientation_set(chi, orients, cfg.noise_spec())
    rows = []
    for o, f in oset.items:
        rep = evaluate(reconstruct(state, f, o), chi, mask)
        rows.append({"bx": o.b[0], "by": o.b[1], "bz": o.b[2], "hfen": rep.hfen,
                     "nrmse": rep.nrmse, "ssim": rep.ssim, "psnr": rep.psnr})
    return rows


def metric_spread(rows) -> dict:
    return {k: max(r[k] for r in rows) - min(r[k] for r in rows)
            for k in ("hfen", "nrmse", "ssim", "psnr")}


def cmd_sweep_orientations(args) -> int:
    cfg = _config(args)
    state = _require_state(args.checkpoint)
    out = _out_dir(cfg)
    rows = orientation_rows(state, cfg)
    _emit_csv(out / "orientations.csv", ORIENTATION_COLUMNS,
              [[r[c] for c in ORIENTATION_COLUMNS] for r in rows])
    if args.spread:
        spread = metric_spread(rows)
        _emit_csv(out / "spread.csv", ["metric", "max_minus_min"], list(spread.items()))
    if _figures(args):
        from .plotting import plot_orientation_metrics

        plot_orientation_metrics(rows, out / "orientations.png")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _global_flags(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for independent sweep combinations")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")


def _ref_flags(p):
    p.add_argument("--ref", help="reference susceptibility volume for metrics")
    p.add_argument("--mask", help="evaluation mask volume")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsm-inr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="voxelize the configured phantom")
    _global_flags(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("forward", help="synthesize field maps from a susceptibility volume")
    _global_flags(p)
    p.add_argument("--chi", help="susceptibility volume (default: configured phantom)")
    p.add_argument("--mask", help="mask for the reported field RMS")
    p.add_argument("--orientation", action="append", help="x,y,z (repeatable)")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("tkd", help="thresholded k-space division")
    _global_flags(p)
    _ref_flags(p)
    p.add_argument("--field", required=True)
    p.add_argument("--orientation", action="append", help="x,y,z of the field")
    p.add_argument("--t", type=float, help="threshold (default from config)")
    p.add_argument("--zero-fill", action="store_true")
    p.set_defaults(func=cmd_tkd)

    p = sub.add_parser("cosmos", help="multi-orientation least squares")
    _global_flags(p)
    _ref_flags(p)
    p.add_argument("--manifest", help="fields.json written by `forward`")
    p.add_argument("--field", action="append")
    p.add_argument("--orientation", action="append", help="x,y,z per --field")
    p.add_argument("--damping", type=float)
    p.set_defaults(func=cmd_cosmos)

    p = sub.add_parser("train", help="alternating training over the configured weight sweep")
    _global_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-orientations", help="evaluate a trained model across orientations")
    _global_flags(p)
    p.add_argument("--checkpoint", help="checkpoint.qsmck from `train`")
    p.add_argument("--spread", action="store_true", help="also report max - min per metric")
    p.set_defaults(func=cmd_sweep_orientations)

    p = sub.add_parser("metrics", help="compare a volume against a reference")
    _global_flags(p)
    p.add_argument("--x", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--mask")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("kernel-export", help="write analytic (and predicted) kernels")
    _global_flags(p)
    p.add_argument("--orientation", action="append", help="x,y,z (repeatable)")
    p.add_argument("--like", help="take the grid from this volume")
    p.add_argument("--checkpoint", help="also export the trained network's kernel")
    p.set_defaults(func=cmd_kernel_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except QSMError as exc:
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    except ValueError as exc:
        # invalid parameter values reaching library constructors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
