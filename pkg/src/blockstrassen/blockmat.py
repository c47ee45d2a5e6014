"""Blocks, block matrices and the coordinate text format."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataflow import Dataset, Engine


class BlockError(ValueError):
    pass


def is_power_of_two(x: int) -> bool:
    return isinstance(x, (int, np.integer)) and x >= 1 and (x & (x - 1)) == 0


def log2_exact(x: int) -> int:
    if not is_power_of_two(x):
        raise BlockError(f"{x} is not a power of two")
    return int(x).bit_length() - 1


class Label(str, enum.Enum):
    A = "A"
    B = "B"
    M = "M"
    C = "C"

    @property
    def rank(self) -> int:
        return _LABEL_RANK[self]


_LABEL_RANK = {lab: i for i, lab in enumerate(Label)}


class Quadrant(enum.IntEnum):
    Q11 = 0
    Q12 = 1
    Q21 = 2
    Q22 = 3

    @property
    def offset(self) -> tuple[int, int]:
        """(row, col) offset of the quadrant in units of the half side."""
        return divmod(int(self), 2)


@dataclass(frozen=True)
class Tag:
    label: Label
    m_index: int = 0

    def __post_init__(self):
        if type(self.label) is not Label:
            object.__setattr__(self, "label", Label(self.label))
        if self.m_index < 0:
            raise BlockError(f"m_index must be non-negative, got {self.m_index}")

    def __str__(self) -> str:
        return f"{self.label.value},{self.m_index}"


@dataclass(frozen=True, eq=False)
class Block:
    """One square tile: position (in block units), tag and a read-only payload."""

    row_index: int
    col_index: int
    tag: Tag
    payload: np.ndarray

    def __post_init__(self):
        payload = np.asarray(self.payload, dtype=np.float64)
        if payload.ndim != 2 or payload.shape[0] != payload.shape[1]:
            raise BlockError(f"block payload must be square, got shape {payload.shape}")
        if not is_power_of_two(payload.shape[0]):
            raise BlockError(f"block side must be a power of two, got {payload.shape[0]}")
        if self.row_index < 0 or self.col_index < 0:
            raise BlockError("block indices must be non-negative")
        # blocks take ownership of fresh arrays; views are copied
        if payload.flags.writeable:
            if payload.base is not None:
                payload = payload.copy()
            payload.flags.writeable = False
        object.__setattr__(self, "payload", payload)

    @classmethod
    def _trusted(cls, row_index: int, col_index: int, tag: Tag, payload: np.ndarray) -> Block:
        # skips validation: payload is a fresh or already-owned square float64 array
        if payload.flags.writeable:
            payload.flags.writeable = False
        blk = object.__new__(cls)
        object.__setattr__(blk, "row_index", row_index)
        object.__setattr__(blk, "col_index", col_index)
        object.__setattr__(blk, "tag", tag)
        object.__setattr__(blk, "payload", payload)
        return blk

    @property
    def block_size(self) -> int:
        return self.payload.shape[0]

    @property
    def label(self) -> Label:
        return self.tag.label

    @property
    def m_index(self) -> int:
        return self.tag.m_index

    def sort_key(self) -> tuple[int, int, int, int]:
        return (self.tag.label.rank, self.tag.m_index, self.row_index, self.col_index)

    def scalar_count(self) -> int:
        return self.payload.size

    def with_position(self, row_index: int, col_index: int) -> Block:
        if row_index < 0 or col_index < 0:
            raise BlockError("block indices must be non-negative")
        return Block._trusted(row_index, col_index, self.tag, self.payload)

    def with_tag(self, tag: Tag) -> Block:
        return Block._trusted(self.row_index, self.col_index, tag, self.payload)

    def __repr__(self) -> str:
        return (f"Block(row={self.row_index}, col={self.col_index}, tag={self.tag}, "
                f"side={self.block_size})")


def _check_compatible(a: Block, b: Block) -> None:
    if a.block_size != b.block_size:
        raise BlockError(f"block sizes differ: {a.block_size} vs {b.block_size}")
    if (a.row_index, a.col_index) != (b.row_index, b.col_index):
        raise BlockError(
            f"block positions differ: {(a.row_index, a.col_index)} vs {(b.row_index, b.col_index)}"
        )


def block_add(a: Block, b: Block) -> Block:
    _check_compatible(a, b)
    return Block._trusted(a.row_index, a.col_index, a.tag, a.payload + b.payload)


def block_sub(a: Block, b: Block) -> Block:
    _check_compatible(a, b)
    return Block._trusted(a.row_index, a.col_index, a.tag, a.payload - b.payload)


def block_neg(a: Block) -> Block:
    return Block._trusted(a.row_index, a.col_index, a.tag, -a.payload)


def quadrant_of(block: Block, half_in_blocks: int) -> Quadrant:
    r, c = block.row_index, block.col_index
    if not (0 <= r < 2 * half_in_blocks and 0 <= c < 2 * half_in_blocks):
        raise BlockError(
            f"position {(r, c)} outside a {2 * half_in_blocks}x{2 * half_in_blocks} block grid"
        )
    return Quadrant(2 * (r >= half_in_blocks) + (c >= half_in_blocks))


def local_position(block: Block, half_in_blocks: int) -> tuple[int, int]:
    return block.row_index % half_in_blocks, block.col_index % half_in_blocks


@dataclass(frozen=True)
class BlockMatrix:
    n: int
    block_size: int
    blocks: Dataset

    def __post_init__(self):
        _check_dims(self.n, self.block_size)

    @property
    def splits(self) -> int:
        """Block rows (= block columns), ``b`` in the cost model."""
        return self.n // self.block_size

    @property
    def levels(self) -> int:
        return log2_exact(self.splits)

    @property
    def engine(self) -> Engine:
        return self.blocks.engine


def _check_dims(n: int, block_size: int) -> None:
    if not is_power_of_two(n):
        raise BlockError(f"matrix dimension must be a power of two, got {n}")
    if not is_power_of_two(block_size):
        raise BlockError(f"block size must be a power of two, got {block_size}")
    if block_size > n:
        raise BlockError(f"block size {block_size} exceeds matrix dimension {n}")


_default_engine: Engine | None = None


def default_engine() -> Engine:
    global _default_engine
    if _default_engine is None:
        _default_engine = Engine(workers=1)
    return _default_engine


def _blocks_from_dense(dense: np.ndarray, block_size: int, label: Label) -> list[Block]:
    splits = dense.shape[0] // block_size
    tag = Tag(label, 0)
    out = []
    for i in range(splits):
        for j in range(splits):
            tile = dense[i * block_size:(i + 1) * block_size, j * block_size:(j + 1) * block_size]
            out.append(Block(i, j, tag, np.array(tile)))
    return out


def from_coordinate_entries(
    entries: Iterable[tuple[int, int, float]],
    n: int,
    block_size: int,
    label: Label | str = Label.A,
    engine: Engine | None = None,
) -> BlockMatrix:
    """Build a block matrix from 0-based ``(row, col, value)`` entries.

    Missing entries are zero. Duplicated coordinates and out-of-range
    indices are rejected.
    """
    _check_dims(n, block_size)
    dense = np.zeros((n, n), dtype=np.float64)
    seen = np.zeros((n, n), dtype=bool)
    for r, c, v in entries:
        r, c = int(r), int(c)
        if not (0 <= r < n and 0 <= c < n):
            raise BlockError(f"entry ({r}, {c}) out of range for n={n}")
        if seen[r, c]:
            raise BlockError(f"duplicate entry ({r}, {c})")
        seen[r, c] = True
        dense[r, c] = float(v)
    return from_dense(dense, block_size, label, engine)


def from_dense(
    dense: np.ndarray,
    block_size: int,
    label: Label | str = Label.A,
    engine: Engine | None = None,
) -> BlockMatrix:
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise BlockError(f"expected a square matrix, got shape {dense.shape}")
    n = dense.shape[0]
    _check_dims(n, block_size)
    engine = engine or default_engine()
    blocks = _blocks_from_dense(dense, block_size, Label(label))
    return BlockMatrix(n, block_size, engine.parallelize(blocks))


def assemble(blocks: Sequence[Block], n: int, block_size: int) -> np.ndarray:
    """Place blocks into a dense ``n x n`` array, checking the grid is exact."""
    splits = n // block_size
    out = np.zeros((n, n), dtype=np.float64)
    seen = set()
    for blk in blocks:
        pos = (blk.row_index, blk.col_index)
        if blk.block_size != block_size:
            raise BlockError(f"block {pos} has side {blk.block_size}, expected {block_size}")
        if not (0 <= pos[0] < splits and 0 <= pos[1] < splits):
            raise BlockError(f"block position {pos} outside a {splits}x{splits} grid")
        if pos in seen:
            raise BlockError(f"duplicate block position {pos}")
        seen.add(pos)
        r, c = pos[0] * block_size, pos[1] * block_size
        out[r:r + block_size, c:c + block_size] = blk.payload
    if len(seen) != splits * splits:
        missing = sorted({(i, j) for i in range(splits) for j in range(splits)} - seen)
        raise BlockError(f"missing block positions {missing[:8]}")
    return out


def to_dense(m: BlockMatrix) -> np.ndarray:
    return assemble(m.blocks.collect("to_dense"), m.n, m.block_size)


# coordinate text files


def read_coordinate_file(path: str | Path) -> list[tuple[int, int, float]]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise BlockError(f"{path}:{lineno}: expected 'row col value', got {line!r}")
            try:
                entries.append((int(parts[0]), int(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise BlockError(f"{path}:{lineno}: {exc}") from None
    return entries


def infer_dimension(entries: Sequence[tuple[int, int, float]]) -> int:
    """Smallest power of two covering every index (at least 1)."""
    top = max((max(r, c) for r, c, _ in entries), default=0)
    return 1 << math.ceil(math.log2(top + 1)) if top > 0 else 1


def dense_entries(dense: np.ndarray) -> list[tuple[int, int, float]]:
    rows, cols = np.nonzero(dense)
    return [(int(r), int(c), float(dense[r, c])) for r, c in zip(rows, cols)]


def write_coordinate_file(path: str | Path, entries: Iterable[tuple[int, int, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r, c, v in entries:
            fh.write(f"{r} {c} {float(v)!r}\n")
