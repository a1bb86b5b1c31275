"""Command-line interface: ``sparsehash <command> [options]``.

Exit codes: 0 success, 2 configuration/usage error, 3 data error, 4 numerical
failure during training.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import data as io
from .baselines import LinearHashParams, diffhash_fit, linear_codes, nnhash_train, save_linear
from .codes import as_codes, quantize, sparsity, text_to_code
from .config import ConfigError, RunConfig, load_config
from .encoder import forward, init_params, save_checkpoint
from .encoder import load_checkpoint as _load_checkpoint
from .evaluation import GroundTruth, evaluate_index, write_report
from .multimodal import MultimodalConfig, mm_train, save_mm_checkpoints
from .retrieval import build_index, brute_force, lut_probe, plan_query, probe_count, query, save_index
from .retrieval import load_index as _load_index
from .trainer import LossConfig, NumericalError, SgdConfig, pairs_from_labels, train, write_log

log = logging.getLogger("sparsehash")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(ValueError):
    pass


def _readable(loader, path):
    """Run a binary-file loader, reporting missing or corrupt files as data errors."""
    if not Path(path).is_file():
        raise io.DataError(f"no such file: {path}")
    try:
        return loader(path)
    except ValueError as exc:
        raise io.DataError(str(exc)) from None


def load_checkpoint(path):
    return _readable(_load_checkpoint, path)


def load_index(path):
    return _readable(_load_index, path)


# --- synth -------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = io.ClusterConfig(args.n_points, args.clusters, args.dim, args.spread, 1.0, args.seed)
    X, labels = io.make_clusters(cfg)
    if not args.raw:
        X = X / np.linalg.norm(X, axis=1, keepdims=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_features(out / "features.bin", X)
    io.write_labels(out / "labels.txt", labels)
    print(out)
    return EXIT_OK


# --- train -------------------------------------------------------------------


def _training_pairs(cfg: RunConfig, n_items: int) -> np.ndarray:
    if cfg.data.pairs:
        return io.read_pairs(cfg.data.pairs)
    if not cfg.data.labels:
        raise ConfigError("data.pairs or data.labels is required")
    labels = io.read_labels(cfg.data.labels)
    if labels.size != n_items:
        raise io.DataError(f"{cfg.data.labels}: {labels.size} labels for {n_items} feature rows")
    n_neg = int(round(cfg.data.n_pos * cfg.data.neg_ratio))
    return pairs_from_labels(labels, cfg.data.n_pos, n_neg, cfg.sgd.seed)


def _sgd(cfg: RunConfig) -> SgdConfig:
    s = cfg.sgd
    return SgdConfig(lr=s.lr, gamma=s.gamma, momentum=s.momentum, max_epochs=s.epochs, batch_size=s.batch_size, seed=s.seed)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    run_dir = Path(args.out) / cfg.digest()
    run_dir.mkdir(parents=True, exist_ok=True)
    log.info("config %s -> %s", cfg.digest(), run_dir)
    log.info("resolved config:\n%s", cfg.to_ini())
    (run_dir / "config.ini").write_text(cfg.to_ini())
    if not cfg.data.features:
        raise ConfigError("data.features is required")
    X = io.read_features(cfg.data.features)
    loss = LossConfig(alpha=cfg.loss.alpha, lam=cfg.loss.lam, margin=cfg.loss.margin)
    meta = {"config_hash": cfg.digest()}
    method, m = cfg.run.method, cfg.model.m
    if method == "mm":
        if not cfg.data.features_y or not cfg.data.mm_pairs:
            raise ConfigError("method = mm needs data.features_y and data.mm_pairs")
        Y = io.read_features(cfg.data.features_y)
        pairs = io.read_mm_pairs(cfg.data.mm_pairs)
        mcfg = MultimodalConfig(cfg.multimodal.mu1, cfg.multimodal.mu2, loss, loss, sgd=_sgd(cfg))
        xi0 = init_params(X, m, cfg.model.T, cfg.model.beta, cfg.sgd.seed)
        eta0 = init_params(Y, m, cfg.model.T, cfg.model.beta, cfg.sgd.seed)
        res = mm_train(X, Y, pairs, mcfg, xi0, eta0)
        save_mm_checkpoints(run_dir, res.xi, res.eta, config=cfg.to_dict())
        write_log(run_dir / "train_log.tsv", res.log)
    else:
        pairs = _training_pairs(cfg, X.shape[0])
        if pairs.size and pairs[:, :2].max() >= X.shape[0]:
            raise io.DataError("pair index exceeds the number of feature rows")
        if method == "sparse":
            init = init_params(X, m, cfg.model.T, cfg.model.beta, cfg.sgd.seed)
            res = train(X, pairs, loss, _sgd(cfg), init)
            save_checkpoint(run_dir / "checkpoint.bin", res.params, method="sparse", meta=meta)
            write_log(run_dir / "train_log.tsv", res.log)
        elif method == "nnhash":
            params, res = nnhash_train(X, pairs, m, cfg.loss.margin, _sgd(cfg), beta=cfg.model.beta)
            save_linear(run_dir / "checkpoint.bin", params, "nnhash", meta)
            write_log(run_dir / "train_log.tsv", res.log)
        else:
            params = diffhash_fit(X, pairs, m)
            save_linear(run_dir / "checkpoint.bin", params, "diffhash", meta)
    print(run_dir)
    return EXIT_OK


# --- encode / index / query -----------------------------------------------------


def encode_rows(params, tag: str, X: np.ndarray, theta: float = 0.0) -> np.ndarray:
    if X.shape[1] != params.n:
        raise UsageError(f"features have dimension {X.shape[1]}, checkpoint expects {params.n}")
    if tag in ("nnhash", "diffhash"):
        return linear_codes(LinearHashParams.from_encoder(params), X)
    return quantize(forward(params, X).code_state, theta)


def cmd_encode(args) -> int:
    params, tag = load_checkpoint(args.checkpoint)
    X = io.read_features(args.features)
    codes = encode_rows(params, tag, X, args.theta)
    io.write_codes(args.out, codes)
    print(f"mean sparsity {float(sparsity(codes).mean()):.6f}")
    return EXIT_OK


def cmd_index(args) -> int:
    codes = io.read_codes(args.codes)
    index = build_index(codes, args.alphabet)
    save_index(args.out, index)
    print(f"{len(index)} codes, {len(index.lut)} buckets")
    return EXIT_OK


def _query_codes(args, m: int) -> np.ndarray:
    if args.codes:
        codes = io.read_codes(args.codes)
    else:
        codes = as_codes([text_to_code(args.code)])
    if codes.shape[1] != m:
        raise UsageError(f"query codes have length {codes.shape[1]}, index has {m}")
    if args.row is not None:
        if not 0 <= args.row < codes.shape[0]:
            raise UsageError(f"row {args.row} out of range")
        codes = codes[args.row : args.row + 1]
    return codes


def cmd_query(args) -> int:
    index = load_index(args.index)
    if not 0 <= args.r <= index.m:
        raise UsageError(f"--r must lie in [0, {index.m}]")
    for q in _query_codes(args, index.m):
        print(" ".join(map(str, query(index, q, args.r, args.strategy))))
    return EXIT_OK


# --- eval ---------------------------------------------------------------------


def cmd_eval(args) -> int:
    index = load_index(args.index)
    queries = io.read_codes(args.queries)
    if args.gt_pairs:
        gt = GroundTruth.from_pairs(io.read_pairs(args.gt_pairs), len(queries), len(index))
    elif args.query_labels and args.db_labels:
        ql, dl = io.read_labels(args.query_labels), io.read_labels(args.db_labels)
        if ql.size != len(queries) or dl.size != len(index):
            raise io.DataError("label counts do not match the query/database sizes")
        gt = GroundTruth.from_labels(ql, dl)
    else:
        raise UsageError("give --gt-pairs or both --query-labels and --db-labels")
    report = evaluate_index(
        index, queries, gt, radii=args.radii, R=args.R, K=args.K, curve_caps=args.curve, average=args.average
    )
    out = write_report(args.out, report)
    for r in report.radii:
        x = report.per_radius[r]
        print(f"r={r} precision={x.precision:.4f} recall={x.recall:.4f} f1={x.f1:.4f}")
    print(f"mAP@{report.R}={report.map_at_R:.4f} MP@{report.K}={report.mp_at_K:.4f}")
    print(out)
    return EXIT_OK


# --- bench --------------------------------------------------------------------


def bench_codes(n: int, m: int, density: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    p = density / 2
    return rng.choice(np.array([-1, 0, 1], dtype=np.int8), size=(n, m), p=[p, 1 - density, p])


def run_bench(n: int, m: int, radii, n_queries: int, seed: int, density: float = 0.1, budget: float = 2.0):
    """Median per-query latency of probing and scanning at each radius.

    Every cell times at least one query; later queries are skipped once a
    cell has used ``budget`` seconds.
    """
    codes = bench_codes(n, m, density, seed)
    index = build_index(codes)
    queries = codes[np.random.default_rng(seed + 1).choice(n, size=n_queries, replace=False)]
    rows = []
    for r in radii:
        times = {}
        for name, fn in (("probe", lambda q: lut_probe(index, q, r)), ("scan", lambda q: brute_force(index, q, r))):
            ts, start = [], time.perf_counter()
            for q in queries:
                t0 = time.perf_counter()
                fn(q)
                ts.append(time.perf_counter() - t0)
                if time.perf_counter() - start > budget:
                    break
            times[name] = float(np.median(ts))
        plan = plan_query(index, r)
        faster = "probe" if times["probe"] < times["scan"] else "scan"
        chosen = "scan" if plan.strategy == "brute_force" else "probe"
        rows.append(
            dict(r=r, probes=probe_count(m, r), probe_s=times["probe"], scan_s=times["scan"], faster=faster, plan=chosen)
        )
    return rows


def cmd_bench(args) -> int:
    rows = run_bench(args.n, args.m, args.radii, args.queries, args.seed, args.density, args.budget)
    lines = ["r\tprobes\tprobe_s\tscan_s\tfaster\tplan"]
    lines += [f"{x['r']}\t{x['probes']}\t{x['probe_s']:.3e}\t{x['scan_s']:.3e}\t{x['faster']}\t{x['plan']}" for x in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------


def _radii(text: str) -> list[int]:
    try:
        return [int(p) for p in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad radius list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsehash", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a Gaussian-cluster dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-points", type=int, default=2000)
    s.add_argument("--clusters", type=int, default=10)
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--spread", type=float, default=1.4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--raw", action="store_true", help="skip unit-norm row normalization")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train from an INI config")
    s.add_argument("config")
    s.add_argument("--out", default="runs")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("encode", help="encode a feature file into packed codes")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--theta", type=float, default=0.0)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("index", help="build a lookup index over a codes file")
    s.add_argument("--codes", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alphabet", choices=("ternary", "binary"), default="ternary")
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("query", help="ids within Hamming radius r")
    s.add_argument("--index", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--codes", help="codes file of queries")
    g.add_argument("--code", help="one code as a string of '+', '-', '0'")
    s.add_argument("--row", type=int, help="only this row of --codes")
    s.add_argument("--r", type=int, default=0)
    s.add_argument("--strategy", choices=("auto", "probe", "scan"), default="auto")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("eval", help="retrieval metrics for query codes against an index")
    s.add_argument("--index", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--query-labels")
    s.add_argument("--db-labels")
    s.add_argument("--gt-pairs")
    s.add_argument("--out", required=True)
    s.add_argument("--radii", type=_radii, default=[0, 1, 2])
    s.add_argument("--R", type=int, default=10)
    s.add_argument("--K", type=int, default=100)
    s.add_argument("--curve", type=_radii, default=[], help="PR-curve radius caps")
    s.add_argument("--average", choices=("micro", "macro"), default="micro")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="probe vs scan latency over radii")
    s.add_argument("--n", type=int, default=50_000)
    s.add_argument("--m", type=int, default=48)
    s.add_argument("--radii", type=_radii, default=[0, 1, 2, 3, 4])
    s.add_argument("--queries", type=int, default=20)
    s.add_argument("--density", type=float, default=0.1)
    s.add_argument("--budget", type=float, default=2.0, help="seconds per (r, strategy) cell")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.DataError, FileNotFoundError, IndexError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
