"""Imbalanced classification comparison; the seeds can run in separate processes.

    python scripts/bench.py --out runs/bench --jobs 3
"""
import argparse
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from sitta.bench import BenchProtocol, BenchResult, ClassifierSpec, run_bench


def one_seed(protocol, seed):
    return run_bench(replace(protocol, seeds=(seed,))).rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/bench")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--n-major", type=int, default=64)
    ap.add_argument("--translator-iters", type=int, default=800)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    protocol = BenchProtocol(classifier=ClassifierSpec(epochs=args.epochs), n_major=args.n_major,
                             translator_iters=args.translator_iters)
    # each seed is independent and single-threaded, so results do not depend on --jobs
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        rows = [r for part in pool.map(one_seed, [protocol] * len(args.seeds), args.seeds) for r in part]
    result = BenchResult(rows)
    result.write(Path(args.out) / "bench.csv")
    print(result.csv(), end="")


if __name__ == "__main__":
    main()
