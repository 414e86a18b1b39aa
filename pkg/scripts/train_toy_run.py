"""Train the toy multi-scale network on disk-blurred synthetic patches.

    python scripts/train_toy_run.py --iterations 300 --lr 1e-3 --out toy.munw
"""

import argparse
import time

import numpy as np

from eodeblur.degrade import convolve, disk_kernel
from eodeblur.imagecore import RasterImage
from eodeblur.metrics import psnr
from eodeblur.neural import TrainConfig, init_weights, restore_array, save_weights, train_toy
from eodeblur.neural.train import dataset_loss
from eodeblur.scenes import render_scene


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--pairs", type=int, default=8)
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="toy.munw")
    p.add_argument("--csv", default="toy_curve.csv")
    args = p.parse_args()

    pairs = []
    for i in range(args.pairs):
        clean = render_scene(args.patch, 300 + i)
        pairs.append((convolve(clean, disk_kernel(args.radius)), clean))
    cfg = TrainConfig(lr_initial=args.lr, total_iterations=args.iterations, seed=args.seed)
    l0 = dataset_loss(init_weights(seed=cfg.seed), pairs, cfg.fft_loss_weight)
    t = time.perf_counter()
    res = train_toy(cfg, pairs, progress=lambda it, loss: it % 50 == 0 and print(f"iter {it:5d} loss {loss:.4f}"))
    elapsed = time.perf_counter() - t
    l1 = dataset_loss(res.weights, pairs, cfg.fft_loss_weight)
    p_in = np.mean([psnr(d, c) for d, c in pairs])
    p_out = np.mean([psnr(RasterImage(np.clip(restore_array(res.weights, d.data), 0, 1)), c) for d, c in pairs])
    save_weights(res.weights, args.out)
    res.write_csv(args.csv)
    print(f"dataset loss {l0:.4f} -> {l1:.4f} (x{l1 / l0:.2f}); train PSNR {p_in:.2f} -> {p_out:.2f} dB; {elapsed:.0f} s")


if __name__ == "__main__":
    main()
