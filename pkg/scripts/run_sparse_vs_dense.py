"""Sparse vs dense hashing at two code lengths, over several seeds.

Writes one TSV report per seed plus a JSON file with every row.
"""

import argparse
import json
import logging
from dataclasses import asdict
from pathlib import Path

from sparsehash.experiment import ExperimentConfig, format_report, sparse_vs_dense_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--methods", nargs="+", default=None)
    p.add_argument("--out", default="results/sparse_vs_dense")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in args.seeds:
        cfg = ExperimentConfig(seed=seed) if args.methods is None else ExperimentConfig(seed=seed, methods=tuple(args.methods))
        res = sparse_vs_dense_experiment(cfg)
        text = format_report(res)
        (out / f"seed{seed}.tsv").write_text(text)
        print(f"# seed {seed}\n{text}")
        rows += [{"seed": seed, **asdict(r)} for r in res]
    (out / "all.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
