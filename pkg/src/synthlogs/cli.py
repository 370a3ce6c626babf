"""Command-line interface: ``synthlogs fit | stats | generate | reconstruct | validate``.

Exit codes: 0 success, 2 validation failure (or bad arguments/config),
3 I/O or format error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as sio
from .fitting import FitConfig, fit_log, format_rmse_table, reconstruct
from .knotmodel import KnotModelError
from .optim import OptimizationError
from .stats import StatisticsError, fit_statistics, reference_statistics
from .surfacemodel import GrainConfig, SurfaceModelError
from .synth import GenerationConfig, GenerationError, generate_log, to_annotated

logger = logging.getLogger("synthlogs")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
ALL_OUTPUTS = ("heightmap", "point_cloud", "mesh", "knot_labels", "voxels")


class ValidationFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# config


def _load_config(path):
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValidationFailure("config must be a JSON object")
    unknown = set(cfg) - {"fit", "generate", "grain", "export"}
    if unknown:
        raise ValidationFailure(f"unknown config section(s) {sorted(unknown)}")
    return cfg


def _apply(cls_or_obj, overrides, section):
    names = {f.name for f in dataclasses.fields(cls_or_obj)}
    bad = set(overrides) - names
    if bad:
        raise ValidationFailure(f"config section '{section}': unknown key(s) {sorted(bad)}")
    base = cls_or_obj() if isinstance(cls_or_obj, type) else cls_or_obj
    try:
        return dataclasses.replace(base, **overrides)
    except (TypeError, ValueError) as exc:
        raise ValidationFailure(f"config section '{section}': {exc}") from None


def _grain(cfg):
    return _apply(GrainConfig, cfg.get("grain", {}), "grain")


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("SYNTHLOGS_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ValidationFailure(f"SYNTHLOGS_THREADS={env!r} is not an integer") from None


def _pmap(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(args, cfg):
    entries = sio.read_manifest(args.manifest)
    fit_cfg = _apply(FitConfig, cfg.get("fit", {}), "fit")
    fit_cfg = dataclasses.replace(fit_cfg, grain=dataclasses.replace(_grain(cfg), seed=args.seed))
    out = Path(args.output)
    threads = _threads(args)

    def one(entry):
        data = sio.load_log_data(entry)
        model, report = fit_log(data, fit_cfg)
        model.metadata.update({"kind": "fitted", "source": entry.name})
        sio.write_model(out / f"{entry.name}.model.json", model)
        return report

    reports = _pmap(one, entries, threads)
    table = format_rmse_table(reports)
    sio.atomic_write(out / "fit_report.txt", table)
    sio.atomic_write(out / "fit_report.json", sio._dumps({"logs": [r.to_dict() for r in reports]}))
    print(table, end="")
    for r in reports:
        for s in r.skipped_knots:
            logger.warning("%s: knot %s skipped (%s)", r.name, s["knot_id"], s["reason"])
    return EXIT_OK


def _model_paths(items):
    paths = []
    for item in items:
        p = Path(item)
        paths.extend(sorted(p.glob("*.model.json")) if p.is_dir() else [p])
    if not paths:
        raise FileNotFoundError("no model files given")
    return paths


def cmd_stats(args, cfg):
    models = [sio.read_model(p) for p in _model_paths(args.models)]
    stats = fit_statistics(models, shrink=not args.no_shrink)
    sio.write_stats(args.output, stats)
    hg = stats.knot_params
    print(f"{len(models)} models, {hg.counts.get('samples', 0)} knots in {hg.counts.get('clusters', 0)} clusters")
    for name, flag in sorted(hg.defaulted.items()):
        if flag:
            logger.warning("knot statistic '%s' fell back to the reference prior", name)
    return EXIT_OK


def _outputs(arg):
    outs = tuple(o.strip() for o in arg.split(",") if o.strip()) if arg else ALL_OUTPUTS
    bad = set(outs) - set(ALL_OUTPUTS)
    if bad:
        raise ValidationFailure(f"unknown output(s) {sorted(bad)}; choose from {', '.join(ALL_OUTPUTS)}")
    return outs


def _export(model, h, out: Path, outputs, exp, log_files):
    if "heightmap" in outputs:
        sio.write_heightmap_png(out / "heightmap.png", h)
        sio.write_heightmap_csv(out / "heightmap.csv", h)
        log_files += ["heightmap.png", "heightmap.json", "heightmap.csv"]
    if "mesh" in outputs:
        sio.write_mesh(out / "mesh.ply", h, model.centerline, caps=True)
        log_files.append("mesh.ply")
        shells = sio.write_knot_shells(out / "knot_shells", model)
        log_files += [f"knot_shells/{n}" for n in shells]
    if "knot_labels" in outputs:
        sio.write_knot_labels_json(out / "knot_labels.json", model)
        log_files.append("knot_labels.json")
    if "voxels" in outputs:
        sio.write_voxel_labels(out / "voxels.json", model, exp.get("voxel_size", 4.0), h)
        log_files += ["voxels.json", "voxels.meta.json"]


def cmd_generate(args, cfg):
    stats = sio.read_stats(args.stats) if args.stats else reference_statistics()
    problems = sio.validate_statistics(stats)
    if problems:
        raise ValidationFailure("; ".join(problems))
    gen_over = dict(cfg.get("generate", {}))
    gen_over.update({k: v for k, v in (("log_length", args.length), ("point_density", args.density)) if v is not None})
    gen_cfg = _apply(GenerationConfig, gen_over, "generate")
    gen_cfg = dataclasses.replace(gen_cfg, seed=args.seed, grain=_grain(cfg), outputs=_outputs(args.outputs))
    exp = cfg.get("export", {})
    out = Path(args.output)

    def one(index):
        gen = generate_log(stats, gen_cfg, index)
        name = f"log_{index:03d}"
        d = out / name
        files = ["model.json"]
        sio.write_model(d / "model.json", gen.model)
        if "point_cloud" in gen_cfg.outputs:
            rng = np.random.default_rng(np.random.SeedSequence([gen_cfg.seed, index, 1 << 20]))
            data = to_annotated(gen, gen_cfg.point_density, rng, name)
            sio.write_point_cloud(d / "surface.ply", data.surface_points)
            sio.write_knot_annotations(d / "knots.json", data.knots)
            files += ["surface.ply", "knots.json"]
        _export(gen.model, gen.heightmap, d, gen_cfg.outputs, exp, files)
        return name, files, gen

    results = _pmap(one, list(range(args.n)), _threads(args))
    listing = []
    for name, files, gen in results:
        listing += [f"{name}/{f}" for f in files]
        print(f"{name}: {len(gen.model.knots)} knots, {gen.heightmap.n_l} x {gen.heightmap.n_theta} grid, "
              f"attempts {gen.attempts}")
    if "point_cloud" in gen_cfg.outputs:
        sio.write_manifest(out / "dataset.json", [(n, f"{n}/surface.ply", f"{n}/knots.json") for n, _, _ in results],
                           scale_note="synthetic logs, millimetres")
        listing.append("dataset.json")
    sio.write_output_manifest(out, listing)
    return EXIT_OK


def cmd_reconstruct(args, cfg):
    model = sio.read_model(args.model)
    problems = sio.validate_model(model, check_surface=False)
    if problems:
        raise ValidationFailure("; ".join(problems))
    h, _ = reconstruct(model, grain=not args.no_grain)
    out = Path(args.output)
    files = []
    _export(model, h, out, _outputs(args.outputs or "heightmap,mesh,knot_labels"), cfg.get("export", {}), files)
    sio.write_output_manifest(out, files)
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


def cmd_validate(args, cfg):
    doc = sio.read_document(args.document)
    if isinstance(doc, sio.ModelStatistics):
        problems = sio.validate_statistics(doc)
    else:
        problems = sio.validate_model(doc)
    if problems:
        for p in problems:
            print(f"INVALID: {p}")
        return EXIT_INVALID
    print("OK")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with optional sections fit, generate, grain, export")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $SYNTHLOGS_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="synthlogs", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", parents=[common], help="fit log models to a dataset manifest")
    f.add_argument("manifest")
    f.add_argument("-o", "--output", required=True, help="output directory")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("stats", parents=[common], help="fit model statistics to log models")
    s.add_argument("models", nargs="+", help="model JSON files or directories holding *.model.json")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--no-shrink", action="store_true", help="disable correlation shrinkage")
    s.set_defaults(func=cmd_stats)

    g = sub.add_parser("generate", parents=[common], help="generate synthetic logs")
    g.add_argument("--stats", help="statistics JSON (default: built-in reference statistics)")
    g.add_argument("-n", type=int, default=1)
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--length", type=float, help="log length in mm")
    g.add_argument("--density", type=float, help="surface points per mm^2")
    g.add_argument("--outputs", help=f"comma-separated subset of {','.join(ALL_OUTPUTS)}")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("reconstruct", parents=[common], help="export heightmap and meshes of a model")
    r.add_argument("model")
    r.add_argument("-o", "--output", required=True)
    r.add_argument("--no-grain", action="store_true")
    r.add_argument("--outputs", help="comma-separated subset of heightmap,mesh,knot_labels,voxels")
    r.set_defaults(func=cmd_reconstruct)

    v = sub.add_parser("validate", parents=[common], help="check a model or statistics file")
    v.add_argument("document")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate" and args.n < 1:
            raise ValidationFailure("-n must be >= 1")
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, sio.FormatError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GenerationError, OptimizationError, StatisticsError, KnotModelError, SurfaceModelError,
            np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
