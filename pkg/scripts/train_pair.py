"""Train on one synthetic content/texture pair and save a comparison grid.

    python scripts/train_pair.py --out runs/pair --iters 800 --side 64
"""
import argparse
import logging
from pathlib import Path

import numpy as np

from sitta.cli import comparison_grid
from sitta.data import SyntheticSpec, make_synthetic_domain_pair, save_checkpoint, to_tensor, write_pixels
from sitta.trainer import TrainConfig, train_pair, write_history


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/pair")
    ap.add_argument("--content", default="stripes")
    ap.add_argument("--texture", default="dots")
    ap.add_argument("--shape", default="disc")
    ap.add_argument("--iters", type=int, default=800)
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    a, b = make_synthetic_domain_pair(SyntheticSpec(args.content, args.shape, args.side, 1, args.seed),
                                      SyntheticSpec(args.texture, args.shape, args.side, 1, args.seed))
    i_a, i_b = to_tensor(a.items[0].load()), to_tensor(b.items[0].load())
    cfg = TrainConfig(iters=args.iters, image_side=args.side, seed=args.seed, log_every=100)

    def show(it, model, report):
        if it % 100 == 0 or it == cfg.iters - 1:
            print(f"{it:5d}  idt {report.idt:.4f}  rec {report.rec:.4f}  "
                  f"adv_g {report.adv_g:.3f}  adv_d {report.adv_d:.3f}  perc {report.perceptual:.4f}")

    model, history = train_pair(i_a, i_b, cfg, callback=show)
    out = Path(args.out)
    save_checkpoint(model, out / "model.sitt")
    write_history(history, out / "losses.csv")
    write_pixels(comparison_grid(model, i_a, i_b), out / "grid.png")
    idt = np.array([r.idt for r in history])
    print(f"identity loss: iteration 10 {idt[min(10, len(idt) - 1)]:.4f}, final {idt[-1]:.4f}")
    print(f"wrote {out}/model.sitt, losses.csv, grid.png")


if __name__ == "__main__":
    main()
