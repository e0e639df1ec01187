"""
Row chunking for parallel scans over distance matrices.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np


@dataclass
class RowBlock:
    """A contiguous block of row indices with its position in the scan."""
    index: np.ndarray
    block_index: int
    start: int
    stop: int

    def __len__(self) -> int:
        return self.stop - self.start


class RowChunker:
    """
    Splits index sets into row blocks sized to bound peak memory of a
    block of distance rows, and maps work over them in a thread pool.
    """

    def __init__(self, row_length: int, max_block_bytes: int = 64 * 2**20, workers: Optional[int] = None):
        """
        Initialize the chunker.

        Args:
            row_length: Number of float64 entries in one row
            max_block_bytes: Upper bound on the bytes one block of rows occupies
            workers: Thread count (None = cpu count, 1 = serial)
        """
        self.row_length = max(1, int(row_length))
        self.block_rows = max(1, max_block_bytes // (8 * self.row_length))
        self.workers = workers if workers is not None else (os.cpu_count() or 1)

    def blocks(self, index: np.ndarray) -> List[RowBlock]:
        """Split an index array into ordered row blocks."""
        index = np.asarray(index, dtype=np.intp)
        out = []
        for b, start in enumerate(range(0, len(index), self.block_rows)):
            stop = min(start + self.block_rows, len(index))
            out.append(RowBlock(index=index[start:stop], block_index=b, start=start, stop=stop))
        return out

    def map(self, func: Callable[[RowBlock], Any], index: np.ndarray) -> List[Any]:
        """
        Apply func to every block; results come back in block order.

        Blocks touch disjoint rows, so results can be written without locking.
        """
        blocks = self.blocks(index)
        if self.workers <= 1 or len(blocks) <= 1:
            return [func(block) for block in blocks]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(func, blocks))

    def get_blocks_summary(self, index: np.ndarray) -> Dict[str, Any]:
        """Summary statistics about the block split."""
        blocks = self.blocks(index)
        return {
            "total_rows": int(len(index)),
            "total_blocks": len(blocks),
            "rows_per_block": self.block_rows,
            "row_length": self.row_length,
            "workers": self.workers,
        }
