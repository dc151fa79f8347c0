"""Run-length encoding for binary mattes.

Masks are stored as (row, start_col, length) runs: sorted, non-overlapping,
non-empty. Runs carry no grid size; bounds are checked wherever a grid
context exists (decode, sequence validation).
"""

from __future__ import annotations

import numpy as np

Run = tuple[int, int, int]


def encode_mask(mask: np.ndarray) -> tuple[Run, ...]:
    """Encode a 2-D boolean mask into sorted (row, start, length) runs."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    runs: list[Run] = []
    padded = np.zeros((mask.shape[0], mask.shape[1] + 2), dtype=np.int8)
    padded[:, 1:-1] = mask
    diff = np.diff(padded, axis=1)
    for row in range(mask.shape[0]):
        starts = np.flatnonzero(diff[row] == 1)
        ends = np.flatnonzero(diff[row] == -1)
        for s, e in zip(starts, ends):
            runs.append((row, int(s), int(e - s)))
    return tuple(runs)


def decode_runs(runs: tuple[Run, ...], shape: tuple[int, int]) -> np.ndarray:
    """Decode runs into a boolean mask of the given (height, width) shape.

    Raises ValueError for runs that leave the grid or overlap.
    """
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    for row, start, length in runs:
        if length <= 0:
            raise ValueError(f"non-positive run length in run {(row, start, length)}")
        if not (0 <= row < h and 0 <= start and start + length <= w):
            raise ValueError(f"run {(row, start, length)} out of bounds for {h}x{w} grid")
        if mask[row, start : start + length].any():
            raise ValueError(f"run {(row, start, length)} overlaps a previous run")
        mask[row, start : start + length] = True
    return mask


def run_pixel_count(runs: tuple[Run, ...]) -> int:
    return sum(length for _, _, length in runs)


def runs_centroid(runs: tuple[Run, ...]) -> tuple[float, float]:
    """Centroid (row, col) of the run set, mean over pixel coordinates."""
    total = 0
    row_sum = 0.0
    col_sum = 0.0
    for row, start, length in runs:
        total += length
        row_sum += row * length
        # sum of start .. start+length-1
        col_sum += length * start + length * (length - 1) / 2.0
    if total == 0:
        raise ValueError("cannot take the centroid of an empty run set")
    return row_sum / total, col_sum / total


def validate_runs(runs: tuple[Run, ...]) -> None:
    """Check structural invariants: non-empty, sorted, non-overlapping."""
    if not runs:
        raise ValueError("matte has no runs (empty mask)")
    prev_row, prev_end = -1, -1
    for row, start, length in runs:
        if length <= 0 or row < 0 or start < 0:
            raise ValueError(f"malformed run {(row, start, length)}")
        if row < prev_row or (row == prev_row and start < prev_end):
            raise ValueError("runs must be sorted by (row, col) and non-overlapping")
        prev_row, prev_end = row, start + length
