"""Mean code sparsity of the sparse encoder as the L1 weight alpha grows."""

import argparse

from sparsehash.experiment import ExperimentConfig, alpha_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.01, 0.1])
    p.add_argument("--m", type=int, default=48)
    p.add_argument("--lam", type=float, default=0.012)
    p.add_argument("--margin", type=float, default=40.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    m = args.m
    cfg = ExperimentConfig(
        lengths=(m, m),
        alpha={m: 0.0},
        lam={m: args.lam},
        margin={m: args.margin},
        methods=("sparsehash",),
        seed=args.seed,
    )
    print("alpha\tsparsity")
    for a, s in zip(args.alphas, alpha_sweep(cfg, args.alphas, m)):
        print(f"{a}\t{s:.4f}")


if __name__ == "__main__":
    main()
