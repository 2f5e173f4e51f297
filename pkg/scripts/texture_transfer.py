"""Texture-transfer check on held-out content images.

Trains one stripes->dots model per seed, translates held-out stripes images
and counts how many land closer (channel histograms) to the dots domain.
"""
import argparse
import time

import numpy as np

from sitta.data import SyntheticSpec, make_synthetic_domain_pair, to_pixels, to_tensor, write_pixels
from sitta.metrics import channel_histogram_distance
from sitta.model import DomainId
from sitta.trainer import TrainConfig, train_pair, translate


def run(seed, iters, side, held_out, save=None):
    stripes, dots = make_synthetic_domain_pair(SyntheticSpec("stripes", "disc", side, 2 * held_out + 1, seed),
                                               SyntheticSpec("dots", "disc", side, held_out + 1, seed))
    px = lambda items: [to_tensor(i.load()) for i in items]
    content, texture = px(stripes.items[:1])[0], px(dots.items[:1])[0]
    queries = px(stripes.items[1:held_out + 1])
    ref_c, ref_t = px(stripes.items[held_out + 1:]), px(dots.items[1:])
    model, _ = train_pair(content, texture, TrainConfig(iters=iters, image_side=side, seed=seed, log_every=0))
    wins, tiles = 0, []
    for q in queries:
        out = translate(model, q, texture, DomainId.B)
        d_t = np.mean([channel_histogram_distance(out, r) for r in ref_t])
        d_c = np.mean([channel_histogram_distance(out, r) for r in ref_c])
        wins += d_t < d_c
        tiles.append(np.concatenate([to_pixels(q), to_pixels(out)], axis=0))
    if save:
        write_pixels(np.concatenate(tiles, axis=1), save)
    return wins


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--iters", type=int, default=800)
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--held-out", type=int, default=10)
    ap.add_argument("--save-dir", default=None, help="write a before/after strip per seed here")
    args = ap.parse_args()
    for seed in args.seeds:
        start = time.perf_counter()
        save = f"{args.save_dir}/transfer_seed{seed}.png" if args.save_dir else None
        wins = run(seed, args.iters, args.side, args.held_out, save)
        print(f"seed {seed}: {wins}/{args.held_out} closer to the texture domain "
              f"({time.perf_counter() - start:.0f}s)")


if __name__ == "__main__":
    main()
