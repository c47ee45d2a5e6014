"""Eight-multiplication block products laid out like the Marlin and MLLib plans."""

from __future__ import annotations

import enum

from . import dataflow
from .blockmat import Block, BlockError, BlockMatrix, Label, Tag, block_add
from .dist_strassen import leaf_kernel


class Strategy(str, enum.Enum):
    REPLICATE_JOIN = "replicate_join"
    COGROUP = "cogroup"


def replication_counts(strategy: Strategy | str, splits: int) -> tuple[int, int]:
    """Block copies emitted per matrix: every one of the b² blocks goes out b times."""
    Strategy(strategy)
    if splits < 1:
        raise ValueError(f"splits must be >= 1, got {splits}")
    return splits ** 3, splits ** 3


def _sum_products(products: list[Block]) -> Block:
    acc = products[0]
    for p in products[1:]:
        acc = block_add(acc, p)
    return acc


def naive_block_multiply(
    a: BlockMatrix,
    b: BlockMatrix,
    strategy: Strategy | str = Strategy.REPLICATE_JOIN,
    kernel: str = "naive",
    threshold: int = 64,
) -> BlockMatrix:
    """``C(i,j) = sum_k A(i,k) B(k,j)`` with ``b**3`` leaf multiplications.

    ``replicate_join`` keys every copy by (i, j, k), joins, multiplies and
    sums with ``reduce_by_key`` (three stages). ``cogroup`` sends copies
    straight to their destination (i, j) and multiplies and sums there (two
    stages). Both add the partial products in ascending k, so they agree
    bit for bit.
    """
    strategy = Strategy(strategy)
    if a.n != b.n or a.block_size != b.block_size:
        raise BlockError(
            f"operands disagree: n={a.n}/{b.n}, block_size={a.block_size}/{b.block_size}"
        )
    if a.engine is not b.engine:
        raise BlockError("operands live on different engines")
    s = a.splits
    mult = leaf_kernel(kernel, threshold)

    def product(x: Block, y: Block, i: int, j: int, k: int) -> Block:
        if x.col_index != y.row_index:
            raise BlockError(f"inner indices differ: A{(x.row_index, x.col_index)} B{(y.row_index, y.col_index)}")
        dataflow.count("leaf_multiplies")
        # m_index carries k so the canonical shuffle order is ascending k
        return Block._trusted(i, j, Tag(Label.M, k), mult(x.payload, y.payload))

    a_blocks = a.blocks.map(lambda blk: blk.with_tag(Tag(Label.A, 0)))
    b_blocks = b.blocks.map(lambda blk: blk.with_tag(Tag(Label.B, 0)))

    if strategy is Strategy.REPLICATE_JOIN:
        def emit_a(blk):
            i, k = blk.row_index, blk.col_index
            return [((i, j, k), blk) for j in range(s)]

        def emit_b(blk):
            k, j = blk.row_index, blk.col_index
            return [((i, j, k), blk) for i in range(s)]

        def multiply(group):
            (i, j, k), members = group
            if [m.label for m in members] != [Label.A, Label.B]:
                raise BlockError(f"join key {(i, j, k)} needs one A and one B block, got {members}")
            return (i, j), product(members[0], members[1], i, j, k)

        partials = (a_blocks.flat_map(emit_a).union(b_blocks.flat_map(emit_b))
                    .group_by_key("join").map(multiply))
        result = (partials.reduce_by_key(block_add, "reduce")
                  .map(lambda kv: kv[1].with_tag(Tag(Label.C, 0))))
    else:
        def emit_a(blk):
            i = blk.row_index
            return [((i, j), blk) for j in range(s)]

        def emit_b(blk):
            j = blk.col_index
            return [((i, j), blk) for i in range(s)]

        def multiply_sum(group):
            (i, j), (lefts, rights) = group
            if len(lefts) != s or len(rights) != s:
                raise BlockError(f"destination {(i, j)} got {len(lefts)} A and {len(rights)} B blocks")
            parts = [product(x, y, i, j, k) for k, (x, y) in enumerate(zip(lefts, rights))]
            return _sum_products(parts).with_tag(Tag(Label.C, 0))

        result = (a_blocks.flat_map(emit_a)
                  .cogroup(b_blocks.flat_map(emit_b), "cogroup")
                  .map(multiply_sum))
    return BlockMatrix(a.n, a.block_size, result.materialize("result"))
