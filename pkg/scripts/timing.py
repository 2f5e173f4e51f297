"""Seconds per training iteration and per translate call at a given side."""
import argparse
import time

import numpy as np

from sitta.losses import backbone
from sitta.model import SittaModel
from sitta.tensor import Tensor
from sitta.trainer import Adam, TrainConfig, train_step, translate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--side", type=int, default=288)
    ap.add_argument("--channels", type=int, default=8)
    ap.add_argument("--n-res", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    cfg = TrainConfig(image_side=args.side, base_channels=args.channels, n_res=args.n_res)
    model = SittaModel(cfg.model_config())
    rng = np.random.default_rng(0)
    a, b = (Tensor(rng.uniform(-1, 1, (1, 3, args.side, args.side)).astype(np.float32)) for _ in range(2))
    opt_g = Adam(model.generator_parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_d = Adam(model.discriminator_parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    pyramid = backbone(cfg.backbone_seed)

    def timed(fn):
        fn()
        out = []
        for _ in range(args.repeats):
            start = time.perf_counter()
            fn()
            out.append(time.perf_counter() - start)
        return np.median(out), min(out)

    step = timed(lambda: train_step(model, a, b, opt_g, opt_d, cfg.weights, pyramid))
    fwd = timed(lambda: translate(model, a, b))
    print(f"side {args.side}, channels {args.channels}, n_res {args.n_res}")
    print(f"train iteration: median {step[0]:.3f}s  best {step[1]:.3f}s")
    print(f"translate:       median {fwd[0]:.3f}s  best {fwd[1]:.3f}s")


if __name__ == "__main__":
    main()
