"""Delay-Doppler commutation precoding and the block-sparse system view.

The precoder swaps the vectorization order of the M x N symbol grid
(delay-fastest to Doppler-fastest). Under it the effective channel turns
into an M x M grid of N x N blocks in which every block-row and block-column
has the same number L of nonzero blocks; L equals the number of distinct
delay shifts for integer-delay channels and reaches M when delays are
fractional. Everything here is a pure permutation: the commutation matrix is
never materialized outside of tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LAYOUT_DD, LAYOUT_PRECODED, FrameVector

__all__ = [
    "CommutationMap",
    "BlockSystem",
    "BlockStructureError",
    "commutation_map",
    "precode_vector",
    "deprecode_vector",
    "precode_channel",
    "block_partition",
]


class BlockStructureError(ValueError):
    """The precoded channel does not have a constant number of active blocks
    per row/column, so the block factor graph is not regular."""


@dataclass(frozen=True, eq=False)
class CommutationMap:
    """Permutation realizing the vectorization swap for an M x N grid.

    ``forward`` gathers: precoded[q] = original[forward[q]].
    ``inverse`` undoes it: original[p] = precoded[inverse[p]].
    """

    m: int
    n: int
    forward: np.ndarray
    inverse: np.ndarray


def commutation_map(m: int, n: int) -> CommutationMap:
    if m < 1 or n < 1:
        raise ValueError("grid dimensions must be positive")
    q = np.arange(m * n)
    forward = (q % n) * m + q // n
    inverse = (q % m) * n + q // m
    return CommutationMap(m=m, n=n, forward=forward, inverse=inverse)


def precode_vector(cmap: CommutationMap, v: FrameVector) -> FrameVector:
    v.require_layout(LAYOUT_DD)
    if len(v) != cmap.m * cmap.n:
        raise ValueError(f"frame length {len(v)} does not match {cmap.m}x{cmap.n} grid")
    return FrameVector(v.data[cmap.forward], LAYOUT_PRECODED)


def deprecode_vector(cmap: CommutationMap, v: FrameVector) -> FrameVector:
    v.require_layout(LAYOUT_PRECODED)
    if len(v) != cmap.m * cmap.n:
        raise ValueError(f"frame length {len(v)} does not match {cmap.m}x{cmap.n} grid")
    return FrameVector(v.data[cmap.inverse], LAYOUT_DD)


def precode_channel(cmap: CommutationMap, h_dd) -> np.ndarray:
    """Similarity transform of the channel under the commutation permutation,
    applied as a simultaneous row/column reindexing."""
    h = h_dd.h_dd if hasattr(h_dd, "h_dd") else np.asarray(h_dd)
    mn = cmap.m * cmap.n
    if h.shape != (mn, mn):
        raise ValueError(f"channel matrix must be {mn}x{mn}, got {h.shape}")
    return h[np.ix_(cmap.forward, cmap.forward)]


@dataclass(frozen=True, eq=False)
class BlockSystem:
    """The precoded channel as a regular block-sparse system.

    ``row_cols[d]`` lists the L active block-columns of block-row d (the set
    J(d)); ``col_rows[c]`` lists the L active block-rows of block-column c
    (the set I(c)). ``blocks_row[d, j]`` is the dense N x N block at
    (d, row_cols[d, j]). ``edge_flat[c, i]`` maps the edge between
    block-column c and block-row col_rows[c, i] to its flat index d*L + j in
    row-major edge storage; it lets the detector switch between the
    per-observation and per-variable views of the same message arrays.
    """

    m: int
    n: int
    l: int
    n0: float
    row_cols: np.ndarray  # (M, L) int
    col_rows: np.ndarray  # (M, L) int
    blocks_row: np.ndarray  # (M, L, N, N) complex
    edge_flat: np.ndarray  # (M, L) int

    def cols_for_row(self, d: int) -> np.ndarray:
        """J(d): active block-columns of block-row d."""
        return self.row_cols[d]

    def rows_for_col(self, c: int) -> np.ndarray:
        """I(c): active block-rows of block-column c."""
        return self.col_rows[c]

    def block(self, d: int, c: int) -> np.ndarray:
        """The (d, c) block; raises KeyError when the block is inactive."""
        j = np.where(self.row_cols[d] == c)[0]
        if len(j) == 0:
            raise KeyError(f"block ({d}, {c}) is not active")
        return self.blocks_row[d, int(j[0])]

    def active_pairs(self):
        """All (d, c) positions with a nonzero block, row-major order."""
        for d in range(self.m):
            for c in self.row_cols[d]:
                yield d, int(c)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.m * self.n, self.m * self.n), dtype=np.complex128)
        for d in range(self.m):
            for j, c in enumerate(self.row_cols[d]):
                out[d * self.n : (d + 1) * self.n, c * self.n : (c + 1) * self.n] = (
                    self.blocks_row[d, j]
                )
        return out


def block_partition(
    h: np.ndarray, n: int, n0: float, zero_tol: float = 1e-9
) -> BlockSystem:
    """Partition a precoded MN x MN channel into its active N x N blocks.

    A block counts as nonzero when its Frobenius norm exceeds
    ``zero_tol * ||H||_F / M``. The partition requires the same count L of
    active blocks in every block-row and block-column; violations raise
    BlockStructureError naming the offending block-column.
    """
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("precoded channel must be square")
    mn = h.shape[0]
    if mn % n != 0:
        raise ValueError(f"matrix dimension {mn} is not a multiple of block size {n}")
    m = mn // n

    h4 = h.reshape(m, n, m, n)
    norms = np.sqrt(np.sum(np.abs(h4) ** 2, axis=(1, 3)))  # (M rows, M cols)
    threshold = zero_tol * np.linalg.norm(h) / m
    mask = norms > threshold

    col_counts = mask.sum(axis=0)
    row_counts = mask.sum(axis=1)
    l = int(col_counts[0])
    bad_cols = np.where(col_counts != l)[0]
    if len(bad_cols):
        raise BlockStructureError(
            f"block-column {int(bad_cols[0])} has {int(col_counts[bad_cols[0]])} "
            f"active blocks, expected {l}; the channel violates the regular "
            "block-sparsity model (or zero_tol is unsuitable)"
        )
    bad_rows = np.where(row_counts != l)[0]
    if len(bad_rows):
        raise BlockStructureError(
            f"block-row {int(bad_rows[0])} has {int(row_counts[bad_rows[0]])} "
            f"active blocks, expected {l}"
        )
    if l == 0:
        raise BlockStructureError("channel has no active blocks")

    row_cols = np.stack([np.where(mask[d])[0] for d in range(m)])
    col_rows = np.stack([np.where(mask[:, c])[0] for c in range(m)])
    blocks_row = np.ascontiguousarray(
        np.stack([h4[d, :, row_cols[d], :].transpose(1, 0, 2) for d in range(m)])
    )

    # Column position of block-column c within row d's neighbor list.
    pos_in_row = np.full((m, m), -1, dtype=np.int64)
    for d in range(m):
        pos_in_row[d, row_cols[d]] = np.arange(l)
    edge_flat = np.empty((m, l), dtype=np.int64)
    for c in range(m):
        ds = col_rows[c]
        edge_flat[c] = ds * l + pos_in_row[ds, c]

    return BlockSystem(
        m=m,
        n=n,
        l=l,
        n0=float(n0),
        row_cols=row_cols,
        col_rows=col_rows,
        blocks_row=blocks_row,
        edge_flat=edge_flat,
    )
