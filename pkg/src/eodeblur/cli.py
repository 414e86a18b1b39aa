"""Command-line entry point: ``eodeblur <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 data error (unreadable or invalid
input, failed check), 3 memory budget violation. Every JSON document written
to stdout carries ``schema_version``.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import deconv, degrade, imagecore, metrics, pipeline, spectral
from .neural import model as nmodel
from .neural import train as ntrain
from .neural import weights_io

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BUDGET = 0, 1, 2, 3
SCHEMA_VERSION = 1
IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(doc: dict) -> None:
    print(json.dumps({"schema_version": SCHEMA_VERSION, **doc}, indent=2, sort_keys=True))


def _images_in(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no images in {d}")
    return files


# -- subcommands --------------------------------------------------------------------

def cmd_degrade(args) -> int:
    spec = degrade.DegradeSpec.load(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    img = imagecore.load_raster(args.input)
    imagecore.save_raster(degrade.apply(spec, img), args.output)
    return EXIT_OK


def cmd_estimate_kernel(args) -> int:
    deg = imagecore.load_raster(args.degraded)
    ref = imagecore.load_raster(args.reference)
    otf = spectral.estimate_otf(deg, ref, eps=args.eps)
    k = spectral.kernel_from_otf(otf, args.support)
    out = Path(args.out)
    out.write_text(k.to_json())
    pgm = Path(args.pgm) if args.pgm else out.with_suffix(".pgm")
    imagecore.save_plane_pgm(k.taps, pgm)
    doc = {"kernel_file": str(out), "pgm_file": str(pgm), "support": k.size,
           "regularization_eps": otf.regularization_eps}
    if args.parametric:
        grid = [float(r) for r in args.parametric.split(",")]
        radius, residual = spectral.fit_defocus_radius(deg, ref, grid)
        doc["defocus_radius"] = radius
        doc["profile_residual"] = residual
        doc["ncc_vs_fitted_disk"] = spectral.kernel_ncc(k, degrade.disk_kernel(radius))
    _emit(doc)
    return EXIT_OK


def _load_kernel(path) -> degrade.BlurKernel:
    return degrade.BlurKernel.from_json(Path(path).read_text())


def cmd_deconv(args) -> int:
    img = imagecore.load_raster(args.input)
    k = _load_kernel(args.kernel)
    if args.taper:
        img = deconv.edge_taper(img, k)
    if args.backend == "wiener":
        out = deconv.wiener(img, k, args.nsr, boundary=args.boundary)
    else:
        out = deconv.richardson_lucy(img, k, args.iters)
        out = out.with_data(np.clip(out.data, 0.0, 1.0))
    imagecore.save_raster(out, args.output)
    return EXIT_OK


def cmd_restore(args) -> int:
    config = pipeline.PipelineConfig.from_ini(args.config) if args.config else pipeline.PipelineConfig()
    config = config.with_env()
    changes = {k: v for k, v in (("backend", args.backend), ("workers", args.workers),
                                 ("mode", args.mode), ("tile_size", args.tile_size),
                                 ("overlap", args.overlap)) if v is not None}
    config = replace(config, **changes)
    assets = pipeline.Assets(
        kernel=_load_kernel(args.kernel) if args.kernel else None,
        weights=weights_io.load_weights(args.weights) if args.weights else None,
    )
    img = imagecore.load_raster(args.input)
    ref = imagecore.load_raster(args.ref) if args.ref else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ResourceWarning)
        result = pipeline.restore(img, config, assets, ref)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    imagecore.save_raster(result.output, args.output)
    doc = result.to_dict()
    doc["output_file"] = str(args.output)
    if args.json:
        Path(args.json).write_text(json.dumps(doc, indent=2))
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_metrics(args) -> int:
    img = imagecore.load_raster(args.input)
    ref = imagecore.load_raster(args.ref) if args.ref else None
    niqe = metrics.NiqeModel.load(args.niqe_model) if args.niqe_model else None
    if ref is None and niqe is None and args.brisque_model is None:
        raise UsageError("metrics needs at least one of --ref, --niqe-model, --brisque-model")
    report = metrics.assess(img, ref, niqe, args.brisque_model)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_edges(args) -> int:
    img = imagecore.load_raster(args.input)
    edges = metrics.sobel_edges(img, args.threshold)
    imagecore.save_raster(imagecore.RasterImage.adopt(edges[None].astype(np.float32)), args.output)
    _emit({"edge_pixels": int(edges.sum()), "threshold": args.threshold})
    return EXIT_OK


def cmd_niqe_fit(args) -> int:
    corpus = [imagecore.load_raster(p) for p in _images_in(args.corpus)]
    model = metrics.niqe_fit(corpus, args.patch_size, args.percentile, args.min_patches)
    model.save(args.out)
    _emit({"model_file": str(args.out), "images": len(corpus), "patch_size": model.patch_size})
    return EXIT_OK


def _training_pairs(data: str | Path) -> list[tuple[imagecore.RasterImage, imagecore.RasterImage]]:
    root = Path(data)
    degraded = _images_in(root / "degraded")
    pairs = []
    for p in degraded:
        clean = root / "clean" / p.name
        if not clean.exists():
            raise FileNotFoundError(f"no clean counterpart for {p.name}")
        pairs.append((imagecore.load_raster(p), imagecore.load_raster(clean)))
    return pairs


def cmd_train_toy(args) -> int:
    overrides = {"total_iterations": args.iterations, "lr_initial": args.lr, "seed": args.seed,
                 "batch_size": args.batch_size}
    if args.config:
        config = ntrain.TrainConfig.from_ini(args.config, **overrides)
    else:
        config = ntrain.TrainConfig(**{k: v for k, v in overrides.items() if v is not None})
    pairs = _training_pairs(args.data)
    arch = nmodel.Architecture(in_channels=pairs[0][0].channels)
    result = ntrain.train_toy(config, pairs, arch)
    weights_io.save_weights(result.weights, args.out)
    csv_path = Path(args.csv) if args.csv else Path(args.out).with_suffix(".csv")
    result.write_csv(csv_path)
    _emit({"weights_file": str(args.out), "curve_file": str(csv_path),
           "initial_loss": result.curve[0][2], "final_loss": result.curve[-1][2],
           "iterations": len(result.curve)})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    w = nmodel.init_weights(seed=args.seed)
    shape = (1, 3, args.size, args.size)
    sample = (rng.uniform(0, 1, shape), rng.uniform(0, 1, shape))
    rep = ntrain.gradcheck_report(w, sample, eps=args.eps, n_params=args.params, seed=args.seed)
    ok = rep.max_relative_error <= args.tolerance
    _emit({"max_relative_error": rep.max_relative_error, "checked": rep.checked,
           "step_halved": rep.shrunk, "skipped": rep.skipped, "worst_parameter": rep.worst_parameter,
           "tolerance": args.tolerance, "passed": ok})
    return EXIT_OK if ok else EXIT_DATA


def cmd_spectrum(args) -> int:
    img = imagecore.load_raster(args.input)
    imagecore.save_plane_pgm(spectral.log_spectrum(img, apodize=args.apodize), args.output)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eodeblur", description="Defocus restoration toolkit for Earth-observation rasters.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("degrade", help="apply a degradation spec")
    s.add_argument("--spec", required=True, help="JSON file or inline JSON")
    s.add_argument("--seed", type=int)
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("estimate-kernel", help="recover the blur kernel from a degraded/reference pair")
    s.add_argument("--degraded", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--support", type=int, default=15, help="odd kernel size")
    s.add_argument("--eps", type=float, help="OTF regularizer (default 1e-2 * mean|R|^2)")
    s.add_argument("--parametric", metavar="R1,R2,...", help="also fit a disk radius from this grid")
    s.add_argument("--out", default="kernel.json")
    s.add_argument("--pgm", help="kernel visualization (default: --out with .pgm)")
    s.set_defaults(func=cmd_estimate_kernel)

    s = sub.add_parser("deconv", help="non-blind deconvolution with a known kernel")
    s.add_argument("--backend", choices=("wiener", "rl"), default="wiener")
    s.add_argument("--kernel", required=True)
    s.add_argument("--nsr", type=float, default=1e-2)
    s.add_argument("--iters", type=int, default=60)
    s.add_argument("--boundary", choices=("periodic", "symmetric"), default="symmetric")
    s.add_argument("--taper", action="store_true", help="edge-taper before deconvolving")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_deconv)

    s = sub.add_parser("restore", help="tiled, budgeted restoration")
    s.add_argument("--config", help="INI file with a [pipeline] section")
    s.add_argument("--weights", help="MUNW weight file (neural backend)")
    s.add_argument("--kernel", help="kernel JSON (classical backends)")
    s.add_argument("--backend", choices=pipeline.BACKENDS)
    s.add_argument("--mode", choices=pipeline.MODES)
    s.add_argument("--workers", type=int)
    s.add_argument("--tile-size", type=int)
    s.add_argument("--overlap", type=int)
    s.add_argument("--ref", help="reference image for SSIM/PSNR")
    s.add_argument("--json", help="also write the result JSON here")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_restore)

    s = sub.add_parser("metrics", help="quality report as JSON")
    s.add_argument("--ref")
    s.add_argument("--niqe-model")
    s.add_argument("--brisque-model")
    s.add_argument("input")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("edges", help="binary Sobel edge map")
    s.add_argument("--threshold", type=float, default=0.25)
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_edges)

    s = sub.add_parser("niqe-fit", help="fit a NIQE model on a directory of sharp images")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--patch-size", type=int, default=96)
    s.add_argument("--percentile", type=float, default=75.0)
    s.add_argument("--min-patches", type=int, default=200)
    s.set_defaults(func=cmd_niqe_fit)

    s = sub.add_parser("train-toy", help="train the toy network on data/degraded + data/clean pairs")
    s.add_argument("--config", help="INI file with a [train] section")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.add_argument("--iterations", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("gradcheck", help="finite-difference check of the network gradients")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--size", type=int, default=16)
    s.add_argument("--params", type=int, default=200)
    s.add_argument("--eps", type=float, default=1e-3)
    s.add_argument("--tolerance", type=float, default=1e-3)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("spectrum", help="log-magnitude spectrum panel as PGM")
    s.add_argument("--apodize", action="store_true")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_spectrum)
    return p


DATA_ERRORS = (imagecore.RasterError, degrade.KernelError, degrade.SpecError, metrics.MetricError,
               weights_io.CorruptWeightsError, pipeline.AssetError, OSError, ValueError)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"eodeblur: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.BudgetError as exc:
        print(f"eodeblur: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except DATA_ERRORS as exc:
        print(f"eodeblur: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
