"""Command line interface.

Exit codes: 0 ok, 1 usage error, 2 verification failure, 3 resource guard.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import statistics
import sys

import numpy as np

from . import costmodel
from .blockmat import (
    BlockError,
    dense_entries,
    from_coordinate_entries,
    infer_dimension,
    is_power_of_two,
    read_coordinate_file,
    to_dense,
    write_coordinate_file,
)
from .costmodel import Algo, CostParams
from .dataflow import DataflowError, write_metrics_csv
from .runner import (
    ALGORITHMS,
    DEFAULT_MEM_CAP,
    ResourceGuardError,
    check_memory,
    expected_leaf_multiplies,
    max_relative_error,
    run,
)
from .serial import naive_multiply

log = logging.getLogger("blockstrassen")

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_GUARD = 0, 1, 2, 3

MODEL_FOR = {"stark": Algo.STARK, "naive-block-join": Algo.MARLIN, "naive-block-cogroup": Algo.MLLIB}

BENCH_HEADER = ("algo", "n", "block_size", "b", "workers", "rep", "stages", "leaf_multiplies",
                "flops", "shuffled_elements", "wall_ms", "model", "model_wall_units")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def mem_cap() -> int:
    raw = os.environ.get("STARK_MEM_CAP_BYTES")
    if raw is None:
        return DEFAULT_MEM_CAP
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"STARK_MEM_CAP_BYTES must be an integer, got {raw!r}") from None


def random_matrix(n: int, density: float, seed: int) -> np.ndarray:
    """Seeded U(-1, 1) matrix; each entry is kept with probability ``density``."""
    rng = np.random.default_rng(seed)
    keep = rng.random((n, n)) < density
    values = rng.uniform(-1.0, 1.0, (n, n))
    return np.where(keep, values, 0.0)


def cmd_gen(args) -> int:
    if not is_power_of_two(args.n):
        raise UsageError(f"--n must be a power of two, got {args.n}")
    if not 0.0 <= args.density <= 1.0:
        raise UsageError(f"--density must be in [0, 1], got {args.density}")
    dense = random_matrix(args.n, args.density, args.seed)
    write_coordinate_file(args.out, dense_entries(dense))
    print(f"wrote {np.count_nonzero(dense)} entries to {args.out}")
    return EXIT_OK


def cmd_multiply(args) -> int:
    a_entries = read_coordinate_file(args.a)
    b_entries = read_coordinate_file(args.b)
    n = args.n or max(infer_dimension(a_entries), infer_dimension(b_entries))
    block_size = args.block_size or n
    if not is_power_of_two(block_size) or block_size > n:
        raise UsageError(f"--block-size must be a power of two <= n={n}, got {block_size}")
    check_memory(args.algo, n, block_size, mem_cap())
    a = to_dense(from_coordinate_entries(a_entries, n, block_size))
    b = to_dense(from_coordinate_entries(b_entries, n, block_size))
    result = run(args.algo, a, b, block_size, workers=args.workers, seed=args.seed,
                 kernel=args.leaf_kernel, threshold=args.threshold)
    if args.out:
        write_coordinate_file(args.out, dense_entries(result.product))
    if args.metrics_out:
        write_metrics_csv(result.metrics, args.metrics_out)
    print(f"algo={args.algo} n={n} block_size={block_size} workers={args.workers} "
          f"stages={result.stages} leaf_multiplies={result.leaf_multiplies} "
          f"flops={result.flops} wall_s={result.wall_s:.4f}")
    return EXIT_OK


def cmd_cost(args) -> int:
    if (args.b is None) == (args.b_range is None):
        raise UsageError("give exactly one of --b or --b-range")
    bs = [args.b] if args.b is not None else costmodel.parse_b_range(args.b_range)
    algos = list(Algo) if args.algo == "all" else [Algo(args.algo)]
    rows = []
    for algo in algos:
        for b in bs:
            rows += costmodel.cost_rows(algo, CostParams(args.n, b, args.cores), args.comm_weight)
    if args.out:
        costmodel.write_cost_csv(rows, args.out)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=costmodel.COST_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: costmodel._fmt(row[k]) for k in costmodel.COST_HEADER})
    if len(bs) > 1:
        for algo in algos:
            best = costmodel.optimal_partition(algo, args.n, args.cores, bs, args.comm_weight)
            print(f"# optimal b for {algo.value}: {best}", file=sys.stderr)
    return EXIT_OK


def bench_rows(sizes, block_sizes, workers_list, repetitions, algos, seed=0, cap=DEFAULT_MEM_CAP):
    for n in sizes:
        a = random_matrix(n, 1.0, seed)
        b = random_matrix(n, 1.0, seed + 1)
        for block_size in block_sizes:
            if block_size > n:
                continue
            splits = n // block_size
            for algo in algos:
                check_memory(algo, n, block_size, cap)
                for workers in workers_list:
                    model = MODEL_FOR.get(algo)
                    model_units = ""
                    if model is not None:
                        _, total = costmodel.cost(model, CostParams(n, splits, workers))
                        model_units = f"{float(total):.3f}"
                    for rep in range(repetitions):
                        res = run(algo, a, b, block_size, workers=workers, seed=seed + rep)
                        yield {
                            "algo": algo, "n": n, "block_size": block_size, "b": splits,
                            "workers": workers, "rep": rep, "stages": res.stages,
                            "leaf_multiplies": res.leaf_multiplies, "flops": res.flops,
                            "shuffled_elements": res.shuffled_elements,
                            "wall_ms": f"{res.wall_s * 1e3:.3f}",
                            "model": model.value if model else "", "model_wall_units": model_units,
                        }


def cmd_bench(args) -> int:
    cap = mem_cap()
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=BENCH_HEADER)
        writer.writeheader()
        medians: dict = {}
        for row in bench_rows(args.sizes, args.block_sizes, args.workers, args.repetitions,
                              args.algos, args.seed, cap):
            writer.writerow(row)
            out.flush()
            key = (row["algo"], row["n"], row["block_size"], row["workers"])
            medians.setdefault(key, []).append(float(row["wall_ms"]))
    finally:
        if out is not sys.stdout:
            out.close()
    for key, walls in sorted(medians.items()):
        print(f"# {key}: median wall_ms {statistics.median(walls):.1f}", file=sys.stderr)
    return EXIT_OK


def verify_cases(n_list, b_list, seed=0, tol=1e-9):
    """Yield ``(description, passed)`` for every oracle and counter check."""
    for n in n_list:
        for splits in b_list:
            if splits > n:
                continue
            block_size = n // splits
            a = random_matrix(n, 1.0, seed)
            b = random_matrix(n, 1.0, seed + 1)
            oracle = naive_multiply(a, b)
            levels = splits.bit_length() - 1
            for algo in ("stark", "naive-block-join", "naive-block-cogroup", "serial-strassen"):
                res = run(algo, a, b, block_size, seed=seed)
                err = max_relative_error(res.product, oracle)
                want_leaves = expected_leaf_multiplies(algo, n, block_size)
                checks = [err <= tol, res.leaf_multiplies == want_leaves,
                          res.flops == want_leaves * block_size ** 3]
                detail = f"err={err:.2e} leaves={res.leaf_multiplies}/{want_leaves}"
                if algo == "stark":
                    checks.append(res.stages == 2 * levels + 2)
                    detail += f" stages={res.stages}/{2 * levels + 2}"
                yield f"n={n} b={splits} {algo}: {detail}", all(checks)


def cmd_verify(args) -> int:
    ok = True
    for desc, passed in verify_cases(args.n, args.b, args.seed, args.tol):
        print(f"{'PASS' if passed else 'FAIL'} {desc}")
        ok &= passed
    print("verify: all cases passed" if ok else "verify: FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blockstrassen", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a random coordinate matrix file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("multiply", help="multiply two coordinate matrix files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--algo", choices=ALGORITHMS, default="stark")
    p.add_argument("--block-size", type=int)
    p.add_argument("--n", type=int, help="matrix dimension (default: inferred from the files)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--leaf-kernel", choices=("naive", "strassen"), default="naive")
    p.add_argument("--threshold", type=int, default=64)
    p.add_argument("--metrics-out")
    p.add_argument("--out")
    p.set_defaults(func=cmd_multiply)

    p = sub.add_parser("cost", help="evaluate the analytical cost model")
    p.add_argument("--algo", choices=[a.value for a in Algo] + ["all"], default="all")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--b", type=int)
    p.add_argument("--b-range", help="lo:hi, powers of two")
    p.add_argument("--cores", type=int, default=1)
    p.add_argument("--comm-weight", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("bench", help="measure runs and join them with the model")
    p.add_argument("--sizes", type=int, nargs="+", default=[256])
    p.add_argument("--block-sizes", type=int, nargs="+", default=[64])
    p.add_argument("--workers", type=int, nargs="+", default=[1])
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--algos", nargs="+", choices=ALGORITHMS,
                   default=["stark", "naive-block-join", "naive-block-cogroup"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="oracle and counter checks")
    p.add_argument("--n", type=int, nargs="+", default=[64, 128])
    p.add_argument("--b", type=int, nargs="+", default=[8, 4], help="splits per side")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ResourceGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (UsageError, BlockError, DataflowError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
