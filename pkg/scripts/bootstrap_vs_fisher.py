"""Compare parametric bootstrap and observed-information standard errors.

Fits one synthetic K=1 corpus, runs the bootstrap (B replicates; 500 is the
usual production choice, 200 is enough for a comparison) and prints the
per-document SE ratio. Set WORDKRILL_THREADS to spread replicates over
worker processes; results do not depend on it.

    python3 scripts/bootstrap_vs_fisher.py --reps 200 --seed 0
"""

from __future__ import annotations

import argparse
import logging
import time

import numpy as np

from wordkrill import SyntheticSpec, fit, generate
from wordkrill.inference import fisher_ses, parametric_bootstrap


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--docs", type=int, default=20)
    p.add_argument("--features", type=int, default=200)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=11, help="bootstrap seed")
    p.add_argument("--method", choices=["joint", "conditional"], default="joint")
    args = p.parse_args()
    logging.basicConfig(level=logging.ERROR)

    matrix, truth = generate(
        SyntheticSpec(n_docs=args.docs, n_features=args.features, k_dims=1, seed=args.data_seed)
    )
    res = fit(matrix, method=args.method)
    fisher = fisher_ses(matrix, res)
    t0 = time.perf_counter()
    boot = parametric_bootstrap(matrix, res, args.reps, seed=args.seed)
    elapsed = time.perf_counter() - t0

    ratio = boot.std_errors[:, 0] / fisher.std_errors[:, 0]
    print(f"{'doc':>8} {'theta':>8} {'fisher':>8} {'boot':>8} {'ratio':>6}")
    for doc, th, f, b, r in zip(matrix.doc_ids, res.theta[:, 0], fisher.std_errors[:, 0], boot.std_errors[:, 0], ratio):
        print(f"{doc:>8} {th:8.3f} {f:8.4f} {b:8.4f} {r:6.2f}")
    share = np.mean((ratio >= 0.5) & (ratio <= 2.0))
    print(f"{args.reps} replicates in {elapsed:.1f}s, {boot.n_failed} failed")
    print(f"ratio within [0.5, 2] for {share:.0%} of documents; median ratio {np.median(ratio):.2f}")


if __name__ == "__main__":
    main()
