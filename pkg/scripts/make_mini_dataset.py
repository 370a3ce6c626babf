"""Regenerate the bundled mini-dataset in src/synthlogs/data/mini/.

Two short synthetic logs drawn from the reference statistics, sampled
sparsely, with knot annotations taken from the generated knot geometry.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from synthlogs import io
from synthlogs.stats import reference_statistics
from synthlogs.synth import GenerationConfig, generate_log, to_annotated

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "synthlogs" / "data" / "mini"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("-o", "--output", type=Path, default=DEFAULT_OUT)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("-n", type=int, default=2)
    ap.add_argument("--length", type=float, default=900.0)
    ap.add_argument("--density", type=float, default=0.03)
    args = ap.parse_args(argv)

    cfg = GenerationConfig(seed=args.seed, log_length=args.length, knot_samples_axis=20, knot_samples_angle=16)
    stats = reference_statistics()
    logs = []
    for i in range(args.n):
        gen = generate_log(stats, cfg, i)
        name = f"log_{i:03d}"
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, i, 1 << 20]))
        data = to_annotated(gen, args.density, rng, name)
        io.write_point_cloud(args.output / f"{name}_surface.ply", data.surface_points)
        io.write_knot_annotations(args.output / f"{name}_knots.json", data.knots)
        io.write_model(args.output / f"{name}_truth.json", gen.model)
        logs.append((name, f"{name}_surface.ply", f"{name}_knots.json"))
        print(f"{name}: {len(data.surface_points)} points, {len(data.knots)} knots")
    io.write_manifest(args.output / "dataset.json", logs, scale_note="synthetic logs at real size, millimetres")
    # sparse clouds need coarser heightmap cells (about two points per cell here)
    io.atomic_write(args.output / "fit_config.json", json.dumps({"fit": {"n_theta": 128, "cell_length": 10.0}}, indent=1) + "\n")


if __name__ == "__main__":
    main()
