"""Uniform entry point for running any multiplication algorithm on dense inputs."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .baseline import Strategy, naive_block_multiply
from .blockmat import from_dense, log2_exact, to_dense
from .costmodel import CostParams, peak_block_footprint
from .dataflow import Engine, StageMetrics
from .dist_strassen import dist_strassen
from .serial import StrassenCounter, naive_multiply, serial_strassen

ALGORITHMS = ("stark", "naive-block-join", "naive-block-cogroup", "serial-strassen", "serial-naive")

DEFAULT_MEM_CAP = 4 * 1024 ** 3


class ResourceGuardError(RuntimeError):
    pass


@dataclass
class RunResult:
    algo: str
    product: np.ndarray
    leaf_multiplies: int
    flops: int
    wall_s: float
    metrics: list[StageMetrics] = field(default_factory=list)

    @property
    def stages(self) -> int:
        return len(self.metrics)

    @property
    def shuffled_elements(self) -> int:
        return sum(m.shuffled_elements for m in self.metrics)


def required_bytes(algo: str, n: int, block_size: int) -> int:
    """Peak scalar storage for both operands, 8 bytes per scalar."""
    splits = n // block_size
    if algo == "stark":
        params = CostParams(n, splits, 1)
        per_matrix = peak_block_footprint(params, params.levels)
    elif algo.startswith("naive-block"):
        per_matrix = splits * n * n
    else:
        per_matrix = 2 * n * n
    return 2 * per_matrix * 8


def check_memory(algo: str, n: int, block_size: int, cap: int = DEFAULT_MEM_CAP) -> int:
    need = required_bytes(algo, n, block_size)
    if need > cap:
        raise ResourceGuardError(
            f"{algo} with n={n}, block_size={block_size} needs about {need} bytes, cap is {cap}"
        )
    return need


def run(
    algo: str,
    a: np.ndarray,
    b: np.ndarray,
    block_size: int,
    workers: int = 1,
    seed: int = 0,
    kernel: str = "naive",
    threshold: int = 64,
) -> RunResult:
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGORITHMS)}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"operands must be equal square matrices, got {a.shape} and {b.shape}")
    n = a.shape[0]

    if algo.startswith("serial"):
        started = time.perf_counter()
        if algo == "serial-naive":
            product, leaves, flops = naive_multiply(a, b), 1, n ** 3
        else:
            counter = StrassenCounter()
            product = serial_strassen(a, b, block_size, counter)
            leaves, flops = counter.base_multiplies, counter.flops
        wall = time.perf_counter() - started
        metrics = [StageMetrics(0, algo, tasks=1, records_in=2, records_out=1,
                                flops=flops, wall_ms=wall * 1e3)]
        return RunResult(algo, product, leaves, flops, wall, metrics)

    with Engine(workers=workers, seed=seed) as engine:
        ma = from_dense(a, block_size, "A", engine)
        mb = from_dense(b, block_size, "B", engine)
        started = time.perf_counter()
        if algo == "stark":
            mc = dist_strassen(ma, mb, kernel=kernel, threshold=threshold)
        else:
            strategy = Strategy.REPLICATE_JOIN if algo == "naive-block-join" else Strategy.COGROUP
            mc = naive_block_multiply(ma, mb, strategy, kernel=kernel, threshold=threshold)
        wall = time.perf_counter() - started
        product = to_dense(mc)
        return RunResult(algo, product, engine.counters["leaf_multiplies"],
                         engine.counters["flops"], wall, engine.metrics())


def expected_leaf_multiplies(algo: str, n: int, block_size: int) -> int:
    levels = log2_exact(n // block_size)
    if algo in ("stark", "serial-strassen"):
        return 7 ** levels
    if algo.startswith("naive-block"):
        return (n // block_size) ** 3
    return 1


def max_relative_error(x: np.ndarray, reference: np.ndarray) -> float:
    """``max |x - ref| / max |ref|`` (0 when both are zero)."""
    scale = float(np.max(np.abs(reference))) if reference.size else 0.0
    diff = float(np.max(np.abs(x - reference))) if reference.size else 0.0
    if scale == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / scale
