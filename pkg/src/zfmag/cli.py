"""Command-line pipeline: simulate, synth, fit, report, roundtrip.

Exit codes: 0 success, 1 validation error (bad config or input, failed
tolerance), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import analysis, fitstack, rasterio, synth
from .config import ConfigError, RunConfig, load_config
from .magnetostatics import build_cross, field_on_grid

OUT_ROOT_ENV = "ZFMAG_OUT_ROOT"


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage


def _out_dir(args, cfg: RunConfig, sub: str) -> str:
    if args.out:
        return args.out
    root = os.environ.get(OUT_ROOT_ENV) or cfg.out
    return os.path.join(root, sub)


def _threads(args) -> int:
    return args.threads or os.cpu_count() or 1


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "route", None):
        cfg.scene.route = args.route
    if getattr(args, "current", None) is not None:
        cfg.scene.current_A = args.current
    return cfg.validate()


def _field(cfg: RunConfig, n_jobs: int, current: float | None = None):
    s = cfg.scene
    current = s.current_A if current is None else current
    return field_on_grid(build_cross(s.pattern(), s.route, current), s.grid(), n_jobs=n_jobs)


def _scene(cfg: RunConfig, n_jobs: int, current: float | None = None) -> synth.Scene:
    s = cfg.scene
    current = s.current_A if current is None else current
    return synth.make_scene(s.pattern(), current, s.route, cfg.seed, s.grid(), s.photon_rate_per_s,
                            s.feature(), s.response(), s.cluster(), n_jobs=n_jobs)


def _fit(stack, cfg: RunConfig, n_jobs: int):
    f = cfg.fit
    binned = fitstack.bin(stack, f.bin_factor)
    maps = fitstack.fit_all(binned, f.weighting, n_jobs=n_jobs, max_iter=f.max_iter)
    mask = fitstack.quality_mask(maps, f.min_contrast_pct, f.max_fwhm_T, f.max_center_err_T)
    return maps, mask


def _fit_summary(maps, mask) -> dict:
    counts = {s.name: int(np.count_nonzero(maps.quality == s)) for s in fitstack.FitStatus}
    n = maps.quality.size
    return {"superpixels": n, "shape_rows_cols": list(maps.shape), "bin_factor": maps.bin_factor,
            "status_counts": counts, "converged_fraction": counts["OK"] / n,
            "kept_after_quality_mask": int(np.count_nonzero(~mask))}


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg, "field")
    fmap = _field(cfg, _threads(args))
    os.makedirs(out, exist_ok=True)
    files = rasterio.write_fieldmap(fmap, out)
    summary = {"command": "simulate", "route": cfg.scene.route, "current_A": cfg.scene.current_A,
               "grid": [fmap.grid.nx, fmap.grid.ny], "max_abs_bz_T": float(np.abs(fmap.bz).max()),
               "on_wire_pixels": int(fmap.on_wire.sum()),
               "files": sorted(os.path.basename(f) for f in files)}
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"simulate: {cfg.scene.route} at {cfg.scene.current_A} A -> {out} "
          f"(max |Bz| = {summary['max_abs_bz_T'] * 1e3:.4f} mT)")
    return 0


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg, "stack")
    n_jobs = _threads(args)
    scene = _scene(cfg, n_jobs)
    stack = synth.render_stack(scene, cfg.protocol.protocol(), cfg.camera.camera(), cfg.seed,
                               noiseless=args.noiseless, quantize=not args.noiseless, n_jobs=n_jobs)
    synth.write_stack(stack, out)
    with open(os.path.join(out, synth.MANIFEST), "rb") as fh:
        import hashlib
        manifest_hash = hashlib.sha256(fh.read()).hexdigest()
    summary = {"command": "synth", "frames": stack.n_steps, "seed": cfg.seed,
               "noiseless": bool(args.noiseless), "manifest_sha256": manifest_hash,
               "saturated_pixels": int(sum(stack.saturated))}
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"synth: {stack.n_steps} frames {stack.grid.nx}x{stack.grid.ny} -> {out}")
    return 0


def cmd_fit(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg, "maps")
    try:
        stack = synth.read_stack(args.stack)
    except synth.StackLoadError as exc:
        print(f"error: corrupt stack: {exc}", file=sys.stderr)
        return 1
    t0 = time.perf_counter()
    maps, mask = _fit(stack, cfg, _threads(args))
    elapsed = time.perf_counter() - t0
    rasterio.write_maps(maps, out, mask)
    summary = {"command": "fit", **_fit_summary(maps, mask)}
    _write_json(os.path.join(out, "fit_summary.json"), summary)
    # timing lives in its own file so the other outputs stay reproducible
    _write_json(os.path.join(out, "timing.json"), {"fit_seconds": elapsed})
    print(f"fit: {summary['superpixels']} superpixels ({maps.shape[0]}x{maps.shape[1]}), "
          f"{summary['converged_fraction'] * 100:.1f}% converged, {elapsed:.2f} s -> {out}")
    return 0


def _report(maps, mask, cfg: RunConfig, out: str, sim=None, row: int | None = None) -> dict:
    os.makedirs(out, exist_ok=True)
    row = cfg.analysis.row if row is None else row
    if row == -1:
        row = maps.shape[0] // 2
    kept = fitstack.apply_mask(maps, mask)
    report = {"command": "report", "row": row, "fit": _fit_summary(maps, mask)}
    for name in ("shift", "contrast_pct", "fwhm"):
        x_um, values = analysis.cross_section(getattr(kept, name), row, maps.grid,
                                              pitch=maps.pitch)
        rasterio.write_csv(os.path.join(out, f"profile_{name}.csv"),
                           np.column_stack([x_um, values]),
                           {"columns": ["x_um", name], "units": ["um", maps.UNITS[name]],
                            "row": row, "bin_factor": maps.bin_factor})
    analysis.render_png(kept.shift, os.path.join(out, "shift.png"), "Diverging")
    analysis.render_png(kept.contrast_pct, os.path.join(out, "contrast.png"), "Sequential")
    analysis.render_png(kept.fwhm, os.path.join(out, "fwhm.png"), "Sequential")

    rate = analysis.superpixel_rate(kept, cfg.camera.gain_photons_per_count, cfg.protocol.exposure_s)
    smap = analysis.sensitivity_map(kept, rate, cfg.analysis.p_f, mask)
    finite = np.isfinite(smap)
    if finite.any():
        inputs = analysis.SensitivityInputs(float(np.nanmean(kept.fwhm)),
                                            float(np.nanmean(kept.contrast_pct)) / 100,
                                            float(np.nanmean(rate)), cfg.analysis.p_f)
        report["sensitivity"] = {"map_mean_T_per_rtHz": float(np.mean(smap[finite])),
                                 "of_mean_parameters_T_per_rtHz": analysis.sensitivity(inputs),
                                 "mean_fwhm_T": inputs.gamma_fwhm, "mean_contrast": inputs.contrast,
                                 "mean_rate_per_s": inputs.photon_rate}
    if sim is not None:
        report["comparison"] = analysis.compare(maps.shift, sim.bz, mask, maps.bin_factor)
    return report


def _print_report(report: dict) -> None:
    fit = report["fit"]
    print(f"report: row {report['row']}, {fit['superpixels']} superpixels, "
          f"{fit['kept_after_quality_mask']} kept")
    if "sensitivity" in report:
        s = report["sensitivity"]
        print(f"  sensitivity: {s['map_mean_T_per_rtHz'] * 1e6:.3f} uT/rtHz (map mean)")
    if "comparison" in report:
        c = report["comparison"]
        print(f"  comparison: rmse = {c['rmse'] * 1e6:.4f} uT, r = {c['pearson_r']:.6f}, "
              f"max |err| = {c['max_abs_err'] * 1e6:.4f} uT")


def cmd_report(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg, "report")
    try:
        maps = rasterio.read_maps(args.maps)
        mask = ~(rasterio.read_pgm8(os.path.join(args.maps, "mask.pgm")) == 0)
        sim = rasterio.read_fieldmap(args.sim) if args.sim else None
    except (OSError, ValueError) as exc:
        print(f"error: missing or unreadable input: {exc}", file=sys.stderr)
        return 1
    row = args.row if args.row is not None else None
    nrows = maps.shape[0]
    if row is not None and not (row == -1 or 0 <= row < nrows):
        print(f"error: --row {row} out of range 0..{nrows - 1}", file=sys.stderr)
        return 1
    report = _report(maps, mask, cfg, out, sim, row)
    _write_json(os.path.join(out, "report.json"), report)
    _print_report(report)
    return 0


def _linearity(cfg: RunConfig, currents, n_jobs: int, noiseless: bool) -> dict:
    series = []
    for current in currents:
        scene = _scene(cfg, n_jobs, current)
        stack = synth.render_stack(scene, cfg.protocol.protocol(), cfg.camera.camera(), cfg.seed,
                                   noiseless=noiseless, quantize=not noiseless, n_jobs=n_jobs)
        maps, _ = _fit(stack, cfg, n_jobs)
        series.append((current, maps))
    ny, nx = series[0][1].shape
    # a column a quarter of the field of view from the centre, where |Bz| is large
    roi = (ny // 2, nx // 4)
    return analysis.linearity(series, roi).to_dict()


def cmd_roundtrip(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg, "roundtrip")
    n_jobs = _threads(args)
    tol = args.rmse_tol if args.rmse_tol is not None else cfg.analysis.max_rmse_T
    r_min = cfg.analysis.min_pearson_r
    stage = "simulate"
    try:
        fmap = _field(cfg, n_jobs)
        stage = "synth"
        scene = _scene(cfg, n_jobs)
        stack = synth.render_stack(scene, cfg.protocol.protocol(), cfg.camera.camera(), cfg.seed,
                                   noiseless=args.noiseless, quantize=not args.noiseless,
                                   n_jobs=n_jobs)
        stage = "fit"
        maps, mask = _fit(stack, cfg, n_jobs)
        stage = "compare"
        metrics = analysis.compare(maps.shift, fmap.bz, mask, maps.bin_factor)
        report = _report(maps, mask, cfg, out, fmap)
        if args.currents:
            stage = "linearity"
            report["linearity"] = _linearity(cfg, args.currents, n_jobs, args.noiseless)
    except Exception as exc:  # noqa: BLE001 - reported with the stage name
        print(f"error: {StageError(stage, exc)}", file=sys.stderr)
        return 2
    checks = [
        {"name": "rmse", "value": metrics["rmse"], "limit": tol, "passed": metrics["rmse"] <= tol},
        {"name": "pearson_r", "value": metrics["pearson_r"], "limit": r_min,
         "passed": metrics["pearson_r"] >= r_min},
    ]
    report["command"] = "roundtrip"
    report["checks"] = checks
    report["passed"] = all(c["passed"] for c in checks)
    _write_json(os.path.join(out, "roundtrip.json"), report)
    _print_report(report)
    for c in checks:
        op = "<=" if c["name"] == "rmse" else ">="
        print(f"  {'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']:.6g} {op} {c['limit']:.6g}")
    if "linearity" in report:
        lin = report["linearity"]
        print(f"  linearity at {lin['roi']}: shift slope {lin['slopes']['shift'] * 1e3:.4f} mT/A, "
              f"R^2 = {lin['r2']['shift']:.8f}")
    if not report["passed"]:
        print("roundtrip FAILED: metrics outside configured tolerances", file=sys.stderr)
        return 1
    print("roundtrip PASSED")
    return 0


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="zfmag", description=__doc__.splitlines()[0])
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=None,
                        help="worker count (default: all cores; results identical for any value)")
    common.add_argument("--seed", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Biot-Savart field maps")
    p.add_argument("--route", choices=["P34", "P14", "P12", "P13", "P23", "P24"])
    p.add_argument("--current", type=float, help="current in A")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", parents=[common], help="synthetic image stack")
    p.add_argument("--route", choices=["P34", "P14", "P12", "P13", "P23", "P24"])
    p.add_argument("--current", type=float)
    p.add_argument("--noiseless", action="store_true", help="write expected counts without noise")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", parents=[common], help="fit every superpixel of a stack")
    p.add_argument("stack", help="stack directory written by 'synth'")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", parents=[common], help="profiles, PNGs, sensitivity, comparison")
    p.add_argument("maps", help="maps directory written by 'fit'")
    p.add_argument("--sim", help="field directory written by 'simulate'")
    p.add_argument("--row", type=int, help="superpixel row for profiles")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("roundtrip", parents=[common], help="simulate, synth, fit and compare")
    p.add_argument("--route", choices=["P34", "P14", "P12", "P13", "P23", "P24"])
    p.add_argument("--current", type=float)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--rmse-tol", type=float, help="RMSE tolerance in T")
    p.add_argument("--currents", type=_float_list, help="e.g. 0.1,0.3,0.5 adds a linearity report")
    p.set_defaults(func=cmd_roundtrip)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
