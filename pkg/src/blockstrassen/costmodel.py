"""Closed-form stage costs for MLLib, Marlin and distributed Strassen.

Every quantity is an exact :class:`~fractions.Fraction`: powers of 7 are
computed as integers, never through the ``b**2.8`` shortcut. A stage costs
``(computation + comm_weight * communication) / parallelization_factor``
abstract units; with unpublished machine constants these units only
support comparisons of shape, ratio and argmin.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .blockmat import is_power_of_two, log2_exact

COST_HEADER = ("algo", "n", "b", "cores", "stage", "computation", "communication", "pf", "wall_units")


class Algo(str, enum.Enum):
    MLLIB = "mllib"
    MARLIN = "marlin"
    STARK = "stark"


@dataclass(frozen=True)
class CostParams:
    n: int
    b: int
    cores: int

    def __post_init__(self):
        if not is_power_of_two(self.n):
            raise ValueError(f"n must be a power of two, got {self.n}")
        if not is_power_of_two(self.b) or self.b > self.n:
            raise ValueError(f"b must be a power of two <= n, got {self.b}")
        if self.cores < 1:
            raise ValueError(f"cores must be >= 1, got {self.cores}")

    @property
    def p(self) -> int:
        return log2_exact(self.n)

    @property
    def q(self) -> int:
        return log2_exact(self.n // self.b)

    @property
    def levels(self) -> int:
        return self.p - self.q

    @property
    def block_side(self) -> int:
        return self.n // self.b


@dataclass(frozen=True)
class StageCost:
    label: str
    computation: Fraction = Fraction(0)
    communication: Fraction = Fraction(0)
    parallelization_factor: int = 1
    comm_weight: Fraction = Fraction(1)

    @property
    def wall_units(self) -> Fraction:
        return (Fraction(self.computation) + self.comm_weight * Fraction(self.communication)) / self.parallelization_factor


def _F(x) -> Fraction:
    return Fraction(x)


def _total(stages: Sequence[StageCost]) -> Fraction:
    return sum((s.wall_units for s in stages), Fraction(0))


def stages_stark(params: CostParams) -> int:
    return 2 * params.levels + 2


def cost_mllib(params: CostParams, comm_weight=1) -> tuple[list[StageCost], Fraction]:
    n, b, cores = params.n, params.b, params.cores
    w = _F(comm_weight)
    pf = min(b * b, cores)
    stages = [
        StageCost("simulation", communication=_F(2 * n * n) / (b * b), parallelization_factor=1, comm_weight=w),
        StageCost("stage1-flatMap-A", computation=_F(b ** 3), parallelization_factor=pf, comm_weight=w),
        StageCost("stage1-flatMap-B", computation=_F(b ** 3), parallelization_factor=pf, comm_weight=w),
        StageCost("stage3-coGroup", communication=_F(2 * min(b, cores) * n * n), parallelization_factor=pf, comm_weight=w),
        StageCost("stage3-flatMap-leaf", computation=_F(b ** 3 * params.block_side ** 3), parallelization_factor=pf, comm_weight=w),
        StageCost("stage4-reduceByKey", computation=_F(b * n * n), parallelization_factor=pf, comm_weight=w),
    ]
    return stages, _total(stages)


def cost_marlin(params: CostParams, comm_weight=1) -> tuple[list[StageCost], Fraction]:
    n, b, cores = params.n, params.b, params.cores
    w = _F(comm_weight)
    pf1 = min(2 * b * b, cores)
    pf3 = min(b ** 3, cores)
    pf4 = min(b * b, cores)
    stages = [
        StageCost("stage1-flatMap-A", computation=_F(2 * b ** 3), communication=_F(2 * b * n * n), parallelization_factor=pf1, comm_weight=w),
        StageCost("stage1-flatMap-B", computation=_F(2 * b ** 3), communication=_F(2 * b * n * n), parallelization_factor=pf1, comm_weight=w),
        StageCost("stage3-join", communication=_F(b * n * n), parallelization_factor=pf3, comm_weight=w),
        # its shuffle write (b n^2) is paid by the reduceByKey read below
        StageCost("stage3-mapPartition-leaf", computation=_F(b ** 3 * params.block_side ** 3), parallelization_factor=pf3, comm_weight=w),
        StageCost("stage4-reduceByKey", communication=_F(b * n * n), parallelization_factor=pf4, comm_weight=w),
    ]
    return stages, _total(stages)


def cost_stark(params: CostParams, comm_weight=1) -> tuple[list[StageCost], Fraction]:
    """Per-level stage costs of distributed Strassen.

    Divide level ``i`` (0..L-1) splits ``7**i`` nodes; combine level ``i``
    merges ``7**(i+1)`` children into ``7**i`` parents. The first divide
    shuffle (``6 n^2`` with a single writer) is reported as its own row.
    """
    n, b, cores, L = params.n, params.b, params.cores, params.levels
    w = _F(comm_weight)
    n2, b2 = n * n, b * b
    s = params.block_side
    leaves = 7 ** L
    pf_leaf = min(leaves, cores)
    stages: list[StageCost] = []
    if L >= 1:
        stages.append(StageCost("stage1-input", communication=_F(6 * n2), parallelization_factor=1, comm_weight=w))
    for i in range(L):
        pf_fm = min(2 * 7 ** i * (b >> i) ** 2, cores)  # (7/4)^i * 2b^2 blocks in flight
        pf_grp = min(7 ** (i + 1), cores)
        stages += [
            StageCost(f"divide{i}-flatMap", computation=Fraction(7 ** i, 4 ** i) * 2 * b2,
                      parallelization_factor=pf_fm, comm_weight=w),
            StageCost(f"divide{i}-groupByKey", communication=3 * Fraction(7 ** i, 2 ** i) * 2 * n2,
                      parallelization_factor=pf_grp, comm_weight=w),
            StageCost(f"divide{i}-add", computation=Fraction(7 ** (i + 1), 2 ** (i + 1)) * 2 * b2,
                      parallelization_factor=pf_grp, comm_weight=w),
        ]
    stages += [
        StageCost("leaf-map", computation=_F(2 * leaves), parallelization_factor=pf_leaf, comm_weight=w),
        StageCost("leaf-groupByKey", communication=_F(2 * leaves * s * s), parallelization_factor=pf_leaf, comm_weight=w),
        StageCost("leaf-multiply", computation=_F(leaves * s ** 3), parallelization_factor=pf_leaf, comm_weight=w),
    ]
    for i in reversed(range(L)):
        pf = min(7 ** (i + 1), cores)
        grow = Fraction(7 ** (i + 1), 4 ** (i + 1))
        stages += [
            StageCost(f"combine{i}-map", computation=grow * b2, parallelization_factor=pf, comm_weight=w),
            StageCost(f"combine{i}-groupByKey", communication=grow * n2, parallelization_factor=pf, comm_weight=w),
            StageCost(f"combine{i}-flatMap", computation=_F(7 ** (i + 1) * 12 * s * s),
                      parallelization_factor=pf, comm_weight=w),
        ]
    return stages, _total(stages)


COST_FUNCTIONS = {Algo.MLLIB: cost_mllib, Algo.MARLIN: cost_marlin, Algo.STARK: cost_stark}

LEAF_STAGE = {Algo.MLLIB: "stage3-flatMap-leaf", Algo.MARLIN: "stage3-mapPartition-leaf", Algo.STARK: "leaf-multiply"}


def cost(algo: Algo | str, params: CostParams, comm_weight=1) -> tuple[list[StageCost], Fraction]:
    return COST_FUNCTIONS[Algo(algo)](params, comm_weight)


def leaf_computation(algo: Algo | str, params: CostParams) -> Fraction:
    stages, _ = cost(algo, params)
    label = LEAF_STAGE[Algo(algo)]
    return next(s.computation for s in stages if s.label == label)


def leaf_multiplications(algo: str, params: CostParams) -> int:
    """Serial block products: ``7**(p-q)`` for Strassen, ``b**3`` for naive blocking."""
    if algo in ("stark", Algo.STARK):
        return 7 ** params.levels
    if algo in ("naive_block", "mllib", "marlin", Algo.MLLIB, Algo.MARLIN):
        return params.b ** 3
    raise ValueError(f"unknown algorithm {algo!r}")


def peak_block_footprint(params: CostParams, level: int) -> int:
    """Scalars per input matrix alive after ``level`` divide rounds (×3 per round)."""
    if not 0 <= level <= params.levels:
        raise ValueError(f"level must be in [0, {params.levels}], got {level}")
    return 3 ** level * params.n ** 2


def optimal_partition(algo: Algo | str, n: int, cores: int, b_range: Iterable[int], comm_weight=1) -> int:
    """The ``b`` with least total cost; ties go to the smaller ``b``."""
    candidates = sorted(set(b_range))
    if not candidates:
        raise ValueError("empty partition range")
    best = None
    for b in candidates:
        _, total = cost(algo, CostParams(n, b, cores), comm_weight)
        if best is None or total < best[0]:
            best = (total, b)
    return best[1]


def parse_b_range(spec: str) -> list[int]:
    """``"lo:hi"`` -> every power of two in ``[lo, hi]``; a single value is allowed."""
    lo_s, _, hi_s = spec.partition(":")
    lo = int(lo_s)
    hi = int(hi_s) if hi_s else lo
    if not (is_power_of_two(lo) and is_power_of_two(hi)) or lo > hi:
        raise ValueError(f"invalid partition range {spec!r}: need powers of two lo <= hi")
    out, b = [], lo
    while b <= hi:
        out.append(b)
        b *= 2
    return out


def cost_rows(algo: Algo | str, params: CostParams, comm_weight=1) -> list[dict]:
    algo = Algo(algo)
    stages, total = cost(algo, params, comm_weight)
    base = {"algo": algo.value, "n": params.n, "b": params.b, "cores": params.cores}
    rows = [
        {**base, "stage": s.label, "computation": s.computation, "communication": s.communication,
         "pf": s.parallelization_factor, "wall_units": s.wall_units}
        for s in stages
    ]
    rows.append({**base, "stage": "TOTAL",
                 "computation": sum((s.computation for s in stages), Fraction(0)),
                 "communication": sum((s.communication for s in stages), Fraction(0)),
                 "pf": "", "wall_units": total})
    return rows


def _fmt(v) -> str:
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else f"{float(v):.6f}"
    return str(v)


def write_cost_csv(rows: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COST_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in COST_HEADER})
