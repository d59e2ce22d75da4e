"""Quantized boundary-shape descriptors and per-cell foreground strengths.

A shape descriptor is a SIFT descriptor computed on a binary object mask and
then binarized: bin i survives iff it exceeds beta times the descriptor's
maximum bin. Cells crossed by the object boundary keep a sparse set of
activated orientation bins; cells fully inside or outside the object come out
empty. The activated orientations of boundary cells then tell, for each empty
cell, whether it sits on the foreground or background side.

Conventions, shared with the descriptor grid:
  * cell neighbors are indexed 0..7 clockwise starting at the right neighbor
    (0 = +x, 2 = +y which is downward, 4 = -x, 6 = -y);
  * orientation bin b covers angles around 45*b degrees measured from +x
    toward +y, so bin j points exactly at neighbor j;
  * mask gradients point from background (0) into foreground (1).

For an empty cell i, each neighbor j votes with its bin pointing at i minus
its bin pointing away from i: a neighbor whose boundary gradient points
toward i says the foreground continues into i. Cells with no informative
neighbor inherit max+min of their already-evaluated neighbors, pass by pass,
until the full 4x4 grid of strengths is assigned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import (
    DEFAULT_FEATURE_PARAMS,
    FeatureParams,
    GRID_CELLS,
    Keypoint,
    ORI_BINS,
    compute_sift,
)
from .validation import check_in_open_unit_interval, check_mask

DEFAULT_BETA = 0.4

# Neighbor index -> (row offset, col offset), clockwise from the right neighbor.
NEIGHBOR_OFFSETS = (
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
)


@dataclass(frozen=True)
class ShapeDescriptor:
    """4x4 grid of 8-bin binary orientation histograms."""

    bins: np.ndarray  # (4, 4, 8) uint8, values in {0, 1}
    beta: float

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.uint8)
        if b.shape != (GRID_CELLS, GRID_CELLS, ORI_BINS):
            raise ValueError(f"shape descriptor grid must be 4x4x8, got {b.shape}")
        if not np.all((b == 0) | (b == 1)):
            raise ValueError("shape descriptor bins must be 0 or 1")
        object.__setattr__(self, "bins", b)

    def empty_cells(self) -> np.ndarray:
        """(4, 4) bool map of cells whose own histogram is empty."""
        return self.bins.sum(axis=2) == 0


def quantize(descriptor: np.ndarray, beta: float = DEFAULT_BETA) -> ShapeDescriptor:
    """Binarize a 128-d descriptor: bin i -> 1 iff d(i) > beta * max d.

    Equality with the threshold quantizes to 0, which keeps the output strictly
    binary. An all-zero descriptor yields an all-zero shape descriptor.
    """
    beta = check_in_open_unit_interval(beta, "beta")
    d = np.asarray(descriptor, dtype=np.float64).ravel()
    if d.size != GRID_CELLS * GRID_CELLS * ORI_BINS:
        raise ValueError(f"expected a 128-bin descriptor, got {d.size} bins")
    m = beta * d.max(initial=0.0)
    bins = (d > m).astype(np.uint8).reshape(GRID_CELLS, GRID_CELLS, ORI_BINS)
    return ShapeDescriptor(bins=bins, beta=beta)


def cell_strengths(sd: ShapeDescriptor) -> np.ndarray:
    """Signed foreground strength per cell: > 0 foreground, < 0 background.

    Boundary cells (non-empty histogram) get 0. Empty cells with at least one
    non-empty neighbor sum, over neighbors j, the neighbor's bin pointing
    toward the cell minus its bin pointing away. Cells whose neighborhoods
    are entirely empty inherit max+min of already-assigned neighbors,
    iterating until every cell holds a value; a fully empty descriptor is
    all zeros. Total function, terminates in at most 16 passes.
    """
    bins = sd.bins
    empty = sd.empty_cells()
    strengths = np.zeros((GRID_CELLS, GRID_CELLS))
    assigned = ~empty  # boundary cells are fixed at 0

    deferred: list[tuple[int, int]] = []
    for r in range(GRID_CELLS):
        for c in range(GRID_CELLS):
            if not empty[r, c]:
                continue
            total = 0.0
            informative = False
            for j, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < GRID_CELLS and 0 <= cc < GRID_CELLS):
                    continue
                if not empty[rr, cc]:
                    informative = True
                h = bins[rr, cc]
                total += float(h[(j + 4) % ORI_BINS]) - float(h[j])
            if informative:
                strengths[r, c] = total
                assigned[r, c] = True
            else:
                deferred.append((r, c))

    # Propagate into cells whose whole neighborhood lacks gradient information.
    while deferred:
        progressed = []
        still = []
        snapshot = assigned.copy()
        for r, c in deferred:
            vals = [
                strengths[r + dr, c + dc]
                for dr, dc in NEIGHBOR_OFFSETS
                if 0 <= r + dr < GRID_CELLS
                and 0 <= c + dc < GRID_CELLS
                and snapshot[r + dr, c + dc]
            ]
            if vals:
                progressed.append((r, c, max(vals) + min(vals)))
            else:
                still.append((r, c))
        if not progressed:
            # fully empty descriptor: nothing to propagate from, leave zeros
            break
        for r, c, v in progressed:
            strengths[r, c] = v
            assigned[r, c] = True
        deferred = still
    return strengths


def extract_shape_descriptor(
    mask: np.ndarray,
    kp: Keypoint,
    beta: float = DEFAULT_BETA,
    params: FeatureParams = DEFAULT_FEATURE_PARAMS,
) -> ShapeDescriptor:
    """SIFT on the mask treated as a {0, 1} gray image, then quantized."""
    mask = check_mask(mask)
    d = compute_sift(mask.astype(np.float64), kp, params)
    return quantize(d, beta)


def render_ascii(sd: ShapeDescriptor, strengths: np.ndarray | None = None) -> str:
    """Debug dump: one line per cell row, activated bins and strength values."""
    lines = []
    for r in range(GRID_CELLS):
        cells = []
        for c in range(GRID_CELLS):
            active = "".join(str(b) for b in np.nonzero(sd.bins[r, c])[0])
            cells.append(f"[{active:>8s}]" if active else "[   .    ]")
        lines.append(" ".join(cells))
        if strengths is not None:
            lines.append(" ".join(f"{strengths[r, c]:+9.2f} " for c in range(GRID_CELLS)))
    return "\n".join(lines)


def render_pgm(strengths: np.ndarray, path: str, cell_px: int = 16) -> None:
    """Write a strength grid as a tiny PGM heatmap (mid-gray = 0)."""
    peak = float(np.abs(strengths).max())
    scale = 127.0 / peak if peak > 0 else 0.0
    img = (127.0 + strengths * scale).clip(0, 255).astype(np.uint8)
    big = np.kron(img, np.ones((cell_px, cell_px), dtype=np.uint8))
    with open(path, "wb") as fh:
        fh.write(f"P5\n{big.shape[1]} {big.shape[0]}\n255\n".encode())
        fh.write(big.tobytes())
