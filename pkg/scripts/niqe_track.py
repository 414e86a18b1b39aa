"""No-reference track: NIQE before and after restoration on held-out synthetic pairs.

The NIQE model is fitted on sharp scenes disjoint from the evaluation seeds.

    python scripts/niqe_track.py --method rl --iters 60
    python scripts/niqe_track.py --method wiener --nsr 0.01
"""

import argparse
import time

import numpy as np

from eodeblur.deconv import richardson_lucy, wiener
from eodeblur.degrade import apply
from eodeblur.metrics import niqe_fit, niqe_score
from eodeblur.scenes import render_scene

from _common import calibration_kernel, degrade_spec


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--method", choices=("rl", "wiener"), default="rl")
    p.add_argument("--iters", type=int, default=60)
    p.add_argument("--nsr", type=float, default=1e-2)
    p.add_argument("--corpus", type=int, default=50, help="number of sharp 384 px scenes for the model")
    p.add_argument("--first-seed", type=int, default=200)
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--save-model")
    args = p.parse_args()

    t0 = time.perf_counter()
    model = niqe_fit([render_scene(384, 50_000 + i) for i in range(args.corpus)])
    if args.save_model:
        model.save(args.save_model)
    k = calibration_kernel()
    restore = (lambda d: richardson_lucy(d, k, args.iters)) if args.method == "rl" else \
        (lambda d: wiener(d, k, args.nsr, boundary="symmetric"))
    before, after = [], []
    for seed in range(args.first_seed, args.first_seed + args.pairs):
        deg = apply(degrade_spec(seed), render_scene(256, seed))
        before.append(niqe_score(deg, model))
        after.append(niqe_score(restore(deg), model))
    before, after = np.array(before), np.array(after)
    rel = (before - after) / before
    print(f"NIQE degraded  mean {before.mean():.3f}  median {np.median(before):.3f}")
    print(f"NIQE restored  mean {after.mean():.3f}  median {np.median(after):.3f}")
    print(f"improved on {np.mean(after < before):.0%} of pairs; median relative improvement {np.median(rel):.1%}")
    print(f"{time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
