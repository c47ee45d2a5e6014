"""Acceptance criteria, one test group per criterion.

The terminal summary prints one PASS/FAIL line per criterion (see
conftest.py). Timing checks take the median of repeated runs after a
warm-up so the compiled leaf kernel is already loaded.
"""

import statistics
from fractions import Fraction

import numpy as np
import pytest

from blockstrassen.blockmat import Block, Label, Quadrant, Tag, from_dense
from blockstrassen.cli import main
from blockstrassen.costmodel import (
    Algo,
    CostParams,
    cost,
    cost_marlin,
    cost_mllib,
    leaf_computation,
    optimal_partition,
)
from blockstrassen.dataflow import Engine, read_metrics_csv
from blockstrassen.dist_strassen import div_n_rep
from blockstrassen.runner import expected_leaf_multiplies, max_relative_error, run
from blockstrassen.serial import StrassenCounter, naive_multiply, serial_strassen

TOL = 1e-9
DIST_ALGOS = ("stark", "naive-block-join", "naive-block-cogroup")
CASES = [(n, n // d) for n in (16, 64, 256, 1024) for d in (2, 4, 8)]
GRID = [2, 4, 8, 16, 32]


def _inputs(n, seed=0):
    rng = np.random.default_rng(seed + n)
    return rng.uniform(-1.0, 1.0, (n, n)), rng.uniform(-1.0, 1.0, (n, n))


@pytest.fixture(scope="module")
def oracle_runs():
    """Every (n, block_size, algo) of the oracle grid, run once and shared."""
    runs = {}
    for n, bs in CASES:
        a, b = _inputs(n)
        oracle = naive_multiply(a, b)
        for algo in DIST_ALGOS:
            res = run(algo, a, b, bs)
            runs[n, bs, algo] = (res, max_relative_error(res.product, oracle))
    return runs


@pytest.fixture(scope="module")
def warm():
    naive_multiply(np.ones((4, 4)), np.ones((4, 4)))
    run("stark", *_inputs(64), 16, workers=2)


def _interleaved_medians(a, b, configs, reps):
    """Median Stark wall time per (block_size, workers), measured round-robin.

    Cycling through the configurations spreads slow drifts in machine load
    over all of them instead of biasing whichever ran during the drift.
    """
    walls = {cfg: [] for cfg in configs}
    for rep in range(max(reps.values())):
        for cfg in configs:
            if rep < reps[cfg]:
                walls[cfg].append(run("stark", a, b, cfg[0], workers=cfg[1]).wall_s)
    return {cfg: statistics.median(ts) for cfg, ts in walls.items()}


# 1 -------------------------------------------------------------------------

@pytest.mark.criterion(1, "oracle equivalence (rel. err <= 1e-9)")
@pytest.mark.parametrize("algo", DIST_ALGOS)
@pytest.mark.parametrize("n, bs", CASES)
def test_c1_oracle_equivalence(oracle_runs, n, bs, algo):
    _, err = oracle_runs[n, bs, algo]
    assert err <= TOL


# 2 -------------------------------------------------------------------------

@pytest.mark.criterion(2, "leaf-multiply counts 7^(p-q) vs b^3")
@pytest.mark.parametrize("n, bs", CASES)
def test_c2_leaf_counts(oracle_runs, n, bs):
    b = n // bs
    levels = b.bit_length() - 1
    assert oracle_runs[n, bs, "stark"][0].leaf_multiplies == 7 ** levels
    for algo in DIST_ALGOS[1:]:
        assert oracle_runs[n, bs, algo][0].leaf_multiplies == b ** 3
    for algo in DIST_ALGOS:
        assert oracle_runs[n, bs, algo][0].leaf_multiplies == expected_leaf_multiplies(algo, n, bs)


@pytest.mark.criterion(2, "leaf-multiply counts 7^(p-q) vs b^3")
def test_c2_example_256_by_8(oracle_runs):
    assert oracle_runs[256, 32, "stark"][0].leaf_multiplies == 343
    assert oracle_runs[256, 32, "naive-block-join"][0].leaf_multiplies == 512


# 3 -------------------------------------------------------------------------

@pytest.mark.criterion(3, "Stark stage count 2(p-q)+2")
@pytest.mark.parametrize("n, bs", CASES)
def test_c3_stage_count(oracle_runs, n, bs):
    levels = (n // bs).bit_length() - 1
    assert oracle_runs[n, bs, "stark"][0].stages == 2 * levels + 2


@pytest.mark.criterion(3, "Stark stage count 2(p-q)+2")
def test_c3_one_level_is_four_stages():
    res = run("stark", *_inputs(32), 16)
    assert res.stages == 4
    assert [m.label for m in res.metrics] == ["divide-0", "leaf", "combine-0", "result"]


# 4 -------------------------------------------------------------------------

@pytest.mark.criterion(4, "replication accounting (3x per level; 4/2 copies)")
@pytest.mark.parametrize("label", [Label.A, Label.B])
def test_c4_copies_per_quadrant(label):
    want = {Quadrant.Q11: 4, Quadrant.Q12: 2, Quadrant.Q21: 2, Quadrant.Q22: 4}
    for quad, copies in want.items():
        with Engine() as engine:
            r, c = quad.offset
            blk = Block(r, c, Tag(label, 0), np.ones((2, 2)))
            div_n_rep(engine.parallelize([blk]), 2, label="divide")
            (stage,) = engine.metrics()
            assert stage.records_out == copies
            assert stage.shuffled_elements == copies * 4


@pytest.mark.criterion(4, "replication accounting (3x per level; 4/2 copies)")
@pytest.mark.parametrize("n, bs", [(64, 8), (128, 8), (256, 16)])
def test_c4_divide_triples_volume(n, bs):
    a, b = _inputs(n)
    with Engine() as engine:
        data = from_dense(a, bs, "A", engine).blocks.union(from_dense(b, bs, "B", engine).blocks)
        side, level = n // bs, 0
        while side > 1:
            data = div_n_rep(data, side, label=f"divide-{level}")
            side, level = side // 2, level + 1
        shuffled = [m.shuffled_elements for m in engine.metrics()]
    for i, volume in enumerate(shuffled):
        # volume entering level i: 2 matrices x 7^i sub-matrices of side n/2^i
        entering = 2 * 7 ** i * (n >> i) ** 2
        assert volume == 3 * entering


# 5 -------------------------------------------------------------------------

PARAMS = [CostParams(2 ** p, 2 ** l, c) for p in range(0, 15, 2) for l in range(0, min(p, 6) + 1)
          for c in (1, 4, 25, 1000)]


@pytest.mark.criterion(5, "cost-model identities (exact rationals)")
def test_c5_leaf_terms():
    for params in PARAMS:
        n3 = params.n ** 3
        assert leaf_computation(Algo.MLLIB, params) == n3
        assert leaf_computation(Algo.MARLIN, params) == n3
        assert leaf_computation(Algo.STARK, params) == Fraction(7, 8) ** params.levels * n3
        assert isinstance(cost(Algo.STARK, params)[1], Fraction)


@pytest.mark.criterion(5, "cost-model identities (exact rationals)")
def test_c5_hand_evaluated_totals():
    assert cost_mllib(CostParams(16, 2, 4))[1] == Fraction(1540)
    assert cost_marlin(CostParams(16, 2, 4))[1] == Fraction(1800)


# 6 -------------------------------------------------------------------------

@pytest.mark.criterion(6, "U-shape: interior minimum (model and measured)")
@pytest.mark.parametrize("algo", list(Algo))
def test_c6_model_interior_minimum(algo):
    assert optimal_partition(algo, 8192, 25, GRID) not in (GRID[0], GRID[-1])


@pytest.mark.criterion(6, "U-shape: interior minimum (model and measured)")
@pytest.mark.slow
def test_c6_measured_interior_minimum(warm):
    a, b = _inputs(1024)
    configs = [(1024 // splits, 4) for splits in GRID]
    # the b=32 point is an order of magnitude slower; a few runs settle it
    reps = {cfg: 7 if cfg[0] > 32 else 3 for cfg in configs}
    medians = _interleaved_medians(a, b, configs, reps)
    walls = [medians[cfg] for cfg in configs]
    print("stark n=1024 workers=4 median wall_s by b:", dict(zip(GRID, [round(w, 3) for w in walls])))
    best = walls.index(min(walls))
    assert 0 < best < len(GRID) - 1


# 7 -------------------------------------------------------------------------

@pytest.mark.criterion(7, "serial Strassen counters, accuracy, bit-exactness")
@pytest.mark.parametrize("n, threshold", [(64, 8), (128, 16), (256, 32), (512, 64), (512, 32)])
def test_c7_serial_strassen(n, threshold):
    a, b = _inputs(n, seed=7)
    counter = StrassenCounter()
    got = serial_strassen(a, b, threshold, counter)
    levels = (n // threshold).bit_length() - 1
    assert counter.base_multiplies == 7 ** levels
    assert max_relative_error(got, naive_multiply(a, b)) <= TOL


@pytest.mark.criterion(7, "serial Strassen counters, accuracy, bit-exactness")
@pytest.mark.parametrize("n, threshold", [(16, 2), (64, 4), (128, 16)])
def test_c7_bit_exact_integers(n, threshold):
    rng = np.random.default_rng(n)
    a = rng.integers(-16, 17, (n, n)).astype(float)
    b = rng.integers(-16, 17, (n, n)).astype(float)
    assert np.array_equal(serial_strassen(a, b, threshold), naive_multiply(a, b))


# 8 -------------------------------------------------------------------------

@pytest.mark.criterion(8, "scalability: non-increasing over workers, speedup >= 1.5 at 4")
@pytest.mark.slow
def test_c8_scalability(warm):
    a, b = _inputs(1024)
    medians = _interleaved_medians(a, b, [(128, w) for w in (1, 2, 4)], {(128, w): 5 for w in (1, 2, 4)})
    walls = {w: medians[128, w] for w in (1, 2, 4)}
    print("stark n=1024 b=8 median wall_s by workers:", {w: round(t, 3) for w, t in walls.items()})
    assert walls[1] >= walls[2] >= walls[4]
    assert walls[1] / walls[4] >= 1.5


# 9 -------------------------------------------------------------------------

@pytest.mark.criterion(9, "determinism across worker counts")
@pytest.mark.parametrize("algo, bs", [("stark", 8), ("stark", 4), ("naive-block-join", 8),
                                      ("naive-block-cogroup", 8)])
def test_c9_determinism(tmp_path, algo, bs):
    n = 64
    a_path, b_path = tmp_path / "a.txt", tmp_path / "b.txt"
    assert main(["gen", "--n", str(n), "--seed", "5", "--out", str(a_path)]) == 0
    assert main(["gen", "--n", str(n), "--seed", "6", "--out", str(b_path)]) == 0
    outputs, counters = [], []
    for rep, workers in enumerate((1, 2, 4, 4)):
        out, metrics = tmp_path / f"c{rep}.txt", tmp_path / f"m{rep}.csv"
        assert main(["multiply", str(a_path), str(b_path), "--algo", algo, "--n", str(n),
                     "--block-size", str(bs), "--workers", str(workers), "--seed", "11",
                     "--out", str(out), "--metrics-out", str(metrics)]) == 0
        outputs.append(out.read_bytes())
        counters.append([(m.label, m.tasks, m.records_in, m.records_out, m.shuffled_elements, m.flops)
                         for m in read_metrics_csv(metrics)])
    assert all(o == outputs[0] for o in outputs)
    assert all(c == counters[0] for c in counters)
