"""Distributed Strassen multiplication on a small stage-based dataflow engine."""

from .baseline import Strategy, naive_block_multiply
from .blockmat import Block, BlockMatrix, Label, Quadrant, Tag, from_coordinate_entries, from_dense, to_dense
from .dataflow import Dataset, Engine, StageMetrics
from .dist_strassen import dist_strassen
from .serial import naive_multiply, serial_strassen

__version__ = "0.1.0"

__all__ = [
    "Block",
    "BlockMatrix",
    "Dataset",
    "Engine",
    "Label",
    "Quadrant",
    "StageMetrics",
    "Strategy",
    "Tag",
    "dist_strassen",
    "from_coordinate_entries",
    "from_dense",
    "naive_block_multiply",
    "naive_multiply",
    "serial_strassen",
    "to_dense",
]
