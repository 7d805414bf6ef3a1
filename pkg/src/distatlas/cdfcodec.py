"""Rank-level CDF grids and scalar shape statistics of a series.

A series becomes a small image: values are scaled to [0, 1], binned
along x, ranked into cumulative levels along y, and per-cell counts
are scaled so the densest cell reads 1.0. Normalized entropy and the
signed deviation of the scaled empirical CDF from the diagonal are
computed on the same scaled values, which makes every statistic
invariant to positive affine transforms of the input.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

DEFAULT_X_BINS = 26
DEFAULT_Y_LEVELS = 25

_GRID_HEADER = struct.Struct("<II")


@dataclass(frozen=True)
class GridShape:
    """Grid dimensions: value bins along x, cumulative rank levels along y."""

    x_bins: int = DEFAULT_X_BINS
    y_levels: int = DEFAULT_Y_LEVELS

    def __post_init__(self) -> None:
        if self.x_bins < 2 or self.y_levels < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.x_bins}x{self.y_levels}")

    @property
    def n_cells(self) -> int:
        return self.x_bins * self.y_levels


@dataclass
class CdfGrid:
    """Normalized cell counts; ``cells[i, j]`` is x-bin i, rank level j + 1."""

    shape: GridShape
    cells: np.ndarray

    def flat(self) -> np.ndarray:
        """x-bin-major flattening, the layout used as network input."""
        return self.cells.reshape(-1)

    def to_bytes(self) -> bytes:
        """Shape header plus x-bin-major little-endian float32 cells."""
        body = np.ascontiguousarray(self.cells, dtype="<f4").tobytes()
        return _GRID_HEADER.pack(self.shape.x_bins, self.shape.y_levels) + body

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CdfGrid":
        if len(raw) < _GRID_HEADER.size:
            raise ValueError("truncated grid blob")
        x_bins, y_levels = _GRID_HEADER.unpack_from(raw)
        shape = GridShape(x_bins, y_levels)
        body = raw[_GRID_HEADER.size:]
        if len(body) != 4 * shape.n_cells:
            raise ValueError("grid blob size does not match its header")
        cells = np.frombuffer(body, dtype="<f4").astype(np.float64)
        return cls(shape, cells.reshape(x_bins, y_levels))

    def to_json(self) -> str:
        """Human-readable debug form."""
        return json.dumps({"x_bins": self.shape.x_bins, "y_levels": self.shape.y_levels,
                           "cells": self.cells.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "CdfGrid":
        obj = json.loads(text)
        shape = GridShape(int(obj["x_bins"]), int(obj["y_levels"]))
        cells = np.asarray(obj["cells"], dtype=np.float64)
        if cells.shape != (shape.x_bins, shape.y_levels):
            raise ValueError("grid JSON cells do not match its shape")
        return cls(shape, cells)


@dataclass(frozen=True)
class SeriesStats:
    """Scalar shape descriptors of one series.

    ``skewness`` is ``d_pos - d_neg`` and ``ks_uniform`` is
    ``max(d_pos, d_neg)``, the largest deviations of the scaled
    empirical CDF above and below the diagonal.
    """

    entropy: float
    skewness: float
    ks_uniform: float
    d_pos: float
    d_neg: float


def scale_to_unit(values: np.ndarray) -> tuple[np.ndarray, bool]:
    """Min-max scale to [0, 1]; a constant series maps to all zeros.

    Returns the scaled array and a flag marking the degenerate
    (max == min) case.
    """
    values = np.asarray(values, dtype=np.float64)
    lo = values.min()
    hi = values.max()
    if hi > lo:
        return (values - lo) / (hi - lo), False
    return np.zeros_like(values), True


def _bin_indices(u: np.ndarray, n_bins: int) -> np.ndarray:
    # u in [0, 1]; the value 1.0 is folded into the last bin
    idx = (u * n_bins).astype(np.int64)
    return np.minimum(idx, n_bins - 1)


def _ordinal_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties broken by original order (stable sort)."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0], dtype=np.int64)
    ranks[order] = np.arange(1, values.shape[0] + 1)
    return ranks


def encode_cdf(values: np.ndarray, shape: GridShape | None = None) -> CdfGrid:
    """Encode a series as its rank-level CDF grid.

    Steps: scale values to [0, 1]; bin along x; rank values (ordinal,
    ties by original order) and map rank r to level ceil(y_levels*r/n);
    count observations per (bin, level) cell; divide by the maximum
    cell count. A constant series puts all mass in x-bin 0 while the
    ranks still spread over the levels.
    """
    shape = shape or GridShape()
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if n < 2:
        raise ValueError("need at least 2 observations to form a CDF grid")
    u, _ = scale_to_unit(values)
    bins = _bin_indices(u, shape.x_bins)
    ranks = _ordinal_ranks(values)
    # integer ceil keeps the level map exact; rank n always hits the top level
    levels = (shape.y_levels * ranks + n - 1) // n
    np.clip(levels, 1, shape.y_levels, out=levels)
    counts = np.zeros((shape.x_bins, shape.y_levels), dtype=np.float64)
    np.add.at(counts, (bins, levels - 1), 1.0)
    return CdfGrid(shape, counts / counts.max())


def entropy(values: np.ndarray, n_bins: int = DEFAULT_X_BINS) -> float:
    """Normalized Shannon entropy of the scaled series' bin histogram.

    Bin probabilities come from the same x-binning the grid uses;
    the log2 sum is divided by log2(n_bins) so the result lies in
    [0, 1], with 1.0 for an exactly equal split and 0.0 when all
    mass falls in one bin.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 1:
        raise ValueError("entropy needs at least one observation")
    u, _ = scale_to_unit(values)
    counts = np.bincount(_bin_indices(u, n_bins), minlength=n_bins)
    p = counts[counts > 0] / values.shape[0]
    return float(-(p @ np.log2(p)) / np.log2(n_bins))


def _d_above(u_sorted: np.ndarray) -> float:
    """Largest deviation of the ECDF above the diagonal, clamped at 0."""
    n = u_sorted.shape[0]
    steps = np.arange(1, n + 1, dtype=np.float64) / n
    return max(0.0, float(np.max(steps - u_sorted)))


def signed_ks(values: np.ndarray, n_bins: int = DEFAULT_X_BINS) -> SeriesStats:
    """Signed Kolmogorov-Smirnov deviation of the scaled ECDF from uniform.

    d_pos is the maximal excess of the ECDF above the diagonal and
    d_neg the maximal shortfall below it, each evaluated at both sides
    of every step. d_neg is computed as the d_pos of the negated
    series, which runs the mirrored input through the identical code
    path; negating a series therefore swaps d_pos/d_neg bit for bit
    and negates the skewness exactly. A constant series has all
    statistics zero by definition.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if n < 2:
        raise ValueError("signed K-S needs at least 2 observations")
    ent = entropy(values, n_bins)
    u, degenerate = scale_to_unit(values)
    if degenerate:
        return SeriesStats(entropy=ent, skewness=0.0, ks_uniform=0.0, d_pos=0.0, d_neg=0.0)
    v, _ = scale_to_unit(-values)
    d_pos = _d_above(np.sort(u))
    d_neg = _d_above(np.sort(v))
    return SeriesStats(
        entropy=ent,
        skewness=d_pos - d_neg,
        ks_uniform=max(d_pos, d_neg),
        d_pos=d_pos,
        d_neg=d_neg,
    )
