"""Probe-vs-scan latency table; same as ``sparsehash bench`` with the crossover summarized."""

import argparse

from sparsehash.cli import run_bench


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=50_000)
    p.add_argument("--m", type=int, default=48)
    p.add_argument("--radii", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--queries", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    rows = run_bench(args.n, args.m, args.radii, args.queries, args.seed)
    print("r\tprobes\tprobe_s\tscan_s\tfaster\tplan")
    for x in rows:
        print(f"{x['r']}\t{x['probes']}\t{x['probe_s']:.3e}\t{x['scan_s']:.3e}\t{x['faster']}\t{x['plan']}")
    scan_from = next((x["r"] for x in rows if x["faster"] == "scan"), None)
    plan_from = next((x["r"] for x in rows if x["plan"] == "scan"), None)
    print(f"measured crossover r={scan_from}, planned crossover r={plan_from}")


if __name__ == "__main__":
    main()
