"""Distributed Strassen over a dataset of blocks.

The recursion tree is walked level by level. A node's position in the
tree is its ``m_index``: the root is 0 and the child computing product
``M_m`` (m = 1..7) of node ``i`` is ``7*i + (m - 1)``, so the nodes at
depth ``d`` are exactly ``range(7**d)`` and ``child // 7`` is the parent.

One run is ``levels`` divide rounds, one leaf-multiply round and
``levels`` combine rounds, each closing one shuffle stage, then a final
stage that materializes the product: ``2 * levels + 2`` stages in all.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import dataflow
from .blockmat import (
    Block,
    BlockError,
    BlockMatrix,
    Label,
    Quadrant,
    Tag,
    block_add,
    block_neg,
    block_sub,
    local_position,
    quadrant_of,
)
from .dataflow import Dataset
from .serial import StrassenCounter, naive_multiply, serial_strassen

Q11, Q12, Q21, Q22 = Quadrant

# (matrix, source quadrant) -> ((m, sign), ...): where each input quadrant
# is copied and with which sign it enters the operand of M_m.
REPLICATION: dict[tuple[Label, Quadrant], tuple[tuple[int, int], ...]] = {
    (Label.A, Q11): ((1, +1), (3, +1), (5, +1), (6, -1)),
    (Label.A, Q12): ((5, +1), (7, +1)),
    (Label.A, Q21): ((2, +1), (6, +1)),
    (Label.A, Q22): ((1, +1), (2, +1), (4, +1), (7, -1)),
    (Label.B, Q11): ((1, +1), (2, +1), (4, -1), (6, +1)),
    (Label.B, Q12): ((3, +1), (6, +1)),
    (Label.B, Q21): ((4, +1), (7, +1)),
    (Label.B, Q22): ((1, +1), (3, -1), (5, +1), (7, +1)),
}

# C quadrant -> {m: coefficient of M_m}
COMBINE: dict[Quadrant, dict[int, int]] = {
    Q11: {1: +1, 4: +1, 5: -1, 7: +1},
    Q12: {3: +1, 5: +1},
    Q21: {2: +1, 4: +1},
    Q22: {1: +1, 2: -1, 3: +1, 6: +1},
}

OPERAND_SIGNS: dict[tuple[Label, int], dict[Quadrant, int]] = {}
for (_label, _quad), _targets in REPLICATION.items():
    for _m, _sign in _targets:
        OPERAND_SIGNS.setdefault((_label, _m), {})[_quad] = _sign

COMBINE_TARGETS: dict[int, tuple[tuple[Quadrant, int], ...]] = {
    m: tuple((q, coeffs[m]) for q, coeffs in COMBINE.items() if m in coeffs)
    for m in range(1, 8)
}


def child_index(parent: int, m: int) -> int:
    return 7 * parent + (m - 1)


def split_index(m_index: int) -> tuple[int, int]:
    """``m_index`` -> (parent m_index, product number 1..7)."""
    parent, digit = divmod(m_index, 7)
    return parent, digit + 1


def _signed_sum(terms: list[tuple[int, Block]]) -> Block:
    sign, acc = terms[0]
    if sign < 0:
        acc = block_neg(acc)
    for sign, blk in terms[1:]:
        acc = block_add(acc, blk) if sign > 0 else block_sub(acc, blk)
    return acc


def div_n_rep(data: Dataset, side_in_blocks: int, label: str = "divide") -> Dataset:
    """One divide-and-replicate round.

    ``side_in_blocks`` is the side of the current sub-matrices, in blocks.
    Every block is copied to each ``M_m`` its quadrant takes part in and
    keyed by (child m_index, local row, local col, side); the group is
    then reduced to the signed operand block.
    """
    if side_in_blocks < 2:
        raise BlockError(f"cannot divide a sub-matrix of {side_in_blocks} block(s)")
    half = side_in_blocks // 2

    def replicate(blk: Block):
        if blk.label not in (Label.A, Label.B):
            raise BlockError(f"divide expects A or B blocks, got {blk.tag}")
        lr, lc = local_position(blk, half)
        quad = quadrant_of(blk, half)
        for m, _sign in REPLICATION[(blk.label, quad)]:
            child = child_index(blk.m_index, m)
            yield (child, lr, lc, blk.label.value), blk.with_tag(Tag(blk.label, child))

    def form_operand(group):
        (child, lr, lc, side), members = group
        _, m = split_index(child)
        signs = OPERAND_SIGNS[(Label(side), m)]
        quads = [quadrant_of(blk, half) for blk in members]
        if sorted(quads) != sorted(signs):
            raise BlockError(
                f"operand {side} of M{m} (m_index {child}) at {(lr, lc)}: "
                f"got quadrants {[q.name for q in quads]}, need {[q.name for q in signs]}"
            )
        terms = [(signs[q], blk.with_position(lr, lc)) for q, blk in zip(quads, members)]
        return _signed_sum(terms)

    return data.flat_map(replicate).group_by_key(label).map(form_operand)


def leaf_kernel(name: str = "naive", threshold: int = 64) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Leaf multiply that also reports its multiply-adds to the running task."""
    if name == "naive":
        def kernel(a, b):
            dataflow.count("flops", a.shape[0] ** 3)
            return naive_multiply(a, b)
    elif name == "strassen":
        def kernel(a, b):
            counter = StrassenCounter()
            out = serial_strassen(a, b, min(threshold, a.shape[0]), counter)
            dataflow.count("flops", counter.flops)
            return out
    else:
        raise ValueError(f"unknown leaf kernel {name!r}")
    return kernel


def mul_block_mat(data: Dataset, kernel: Callable | None = None, label: str = "leaf") -> Dataset:
    """Pair each A-side block with its B-side block and multiply them serially."""
    kernel = kernel or leaf_kernel()

    def key(blk: Block):
        return (blk.m_index, blk.row_index, blk.col_index), blk

    def multiply(group):
        (m_index, row, col), members = group
        if len(members) != 2 or [b.label for b in members] != [Label.A, Label.B]:
            raise BlockError(
                f"leaf key {(m_index, row, col)} needs one A and one B block, got {members}"
            )
        a, b = members
        if a.block_size != b.block_size:
            raise BlockError(f"leaf blocks differ in size: {a.block_size} vs {b.block_size}")
        dataflow.count("leaf_multiplies")
        return Block._trusted(row, col, Tag(Label.M, m_index), kernel(a.payload, b.payload))

    return data.map_to_pair(key).group_by_key(label).map(multiply)


def combine(data: Dataset, side_in_blocks: int, final: bool = False, label: str = "combine") -> Dataset:
    """Merge the seven product sub-matrices of every node into its parent.

    ``side_in_blocks`` is the side of the child sub-matrices; the result
    sub-matrices are twice as wide. With ``final`` the output is labelled C.
    """
    out_label = Label.C if final else Label.M

    def scatter(blk: Block):
        if blk.label is not Label.M:
            raise BlockError(f"combine expects M blocks, got {blk.tag}")
        parent, m = split_index(blk.m_index)
        for quad, _coeff in COMBINE_TARGETS[m]:
            yield (parent, int(quad), blk.row_index, blk.col_index), blk

    def gather(group):
        (parent, quad, row, col), members = group
        quad = Quadrant(quad)
        coeffs = COMBINE[quad]
        ms = [split_index(blk.m_index)[1] for blk in members]
        if sorted(ms) != sorted(coeffs):
            raise BlockError(
                f"C{quad.name[1:]} of node {parent} at {(row, col)}: got M{ms}, need M{sorted(coeffs)}"
            )
        acc = _signed_sum([(coeffs[m], blk) for m, blk in zip(ms, members)])
        dr, dc = quad.offset
        return Block._trusted(row + dr * side_in_blocks, col + dc * side_in_blocks,
                              Tag(out_label, parent), acc.payload)

    return data.flat_map(scatter).group_by_key(label).map(gather)


def dist_strassen(
    a: BlockMatrix,
    b: BlockMatrix,
    kernel: str = "naive",
    threshold: int = 64,
) -> BlockMatrix:
    """Multiply two block matrices with distributed Strassen.

    The returned matrix is materialized, so the engine's stage log holds
    the complete run.
    """
    if a.n != b.n or a.block_size != b.block_size:
        raise BlockError(
            f"operands disagree: n={a.n}/{b.n}, block_size={a.block_size}/{b.block_size}"
        )
    if a.engine is not b.engine:
        raise BlockError("operands live on different engines")
    splits, levels = a.splits, a.levels
    mult = leaf_kernel(kernel, threshold)

    data = (a.blocks.map(lambda blk: blk.with_tag(Tag(Label.A, 0)))
            .union(b.blocks.map(lambda blk: blk.with_tag(Tag(Label.B, 0)))))
    for level in range(levels):
        data = div_n_rep(data, splits >> level, label=f"divide-{level}")
    data = mul_block_mat(data, mult)
    if levels == 0:
        data = data.map(lambda blk: blk.with_tag(Tag(Label.C, 0)))
    for level in range(levels, 0, -1):
        data = combine(data, splits >> level, final=level == 1, label=f"combine-{level - 1}")
    return BlockMatrix(a.n, a.block_size, data.materialize("result"))
