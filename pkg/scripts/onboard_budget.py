"""Budgeted full-frame restoration: predicted vs traced peak memory for every backend and mode.

    python scripts/onboard_budget.py --width 2048 --height 1536 --workers 3
"""

import argparse
import time
import tracemalloc

import numpy as np

from eodeblur.degrade import convolve, disk_kernel
from eodeblur.imagecore import RasterImage
from eodeblur.metrics import psnr
from eodeblur.neural import init_weights, load_weights
from eodeblur.pipeline import BACKENDS, MB, MODES, Assets, PipelineConfig, restore
from eodeblur.scenes import render_scene


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--width", type=int, default=2048)
    p.add_argument("--height", type=int, default=1536)
    p.add_argument("--workers", type=int, default=3)
    p.add_argument("--radius", type=float, default=4.0)
    p.add_argument("--rl-iters", type=int, default=10)
    p.add_argument("--weights", help="trained weights for the neural backend (random init otherwise)")
    p.add_argument("--backends", nargs="+", default=list(BACKENDS), choices=BACKENDS)
    args = p.parse_args()

    clean = render_scene((args.height, args.width), seed=5)
    k = disk_kernel(args.radius)
    raw = convolve(clean, k).data.tobytes()
    blurred_psnr = psnr(RasterImage(np.frombuffer(raw, np.float32).reshape(clean.shape)), clean)
    assets = Assets(kernel=k, weights=load_weights(args.weights) if args.weights else init_weights(seed=0))
    print(f"{'backend':16s} {'mode':26s} {'est MB':>8s} {'traced MB':>9s} {'ratio':>6s} {'s':>6s} {'dPSNR':>6s}")
    for backend in args.backends:
        for mode in MODES:
            cfg = PipelineConfig(backend=backend, mode=mode, workers=args.workers,
                                 rl_iterations=args.rl_iters, virtual_budget_mb=1e6, memory_budget_mb=1e6)
            tracemalloc.start()
            img = RasterImage(np.frombuffer(raw, np.float32).reshape(clean.shape))
            t = time.perf_counter()
            res = restore(img, cfg, assets)
            elapsed = time.perf_counter() - t
            peak = tracemalloc.get_traced_memory()[1] / MB
            tracemalloc.stop()
            gain = psnr(res.output, clean) - blurred_psnr
            print(f"{backend:16s} {mode:26s} {res.estimated_peak_mb:8.1f} {peak:9.1f} "
                  f"{res.estimated_peak_mb / peak:6.2f} {elapsed:6.1f} {gain:+6.2f}")


if __name__ == "__main__":
    main()
