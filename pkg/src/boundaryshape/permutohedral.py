"""Approximate high-dimensional Gaussian filtering on the permutohedral lattice.

Computes out_i ~= sum_j exp(-|f_i - f_j|^2 / 2) v_j (self term included) for
arbitrary feature vectors, in O(n d) instead of O(n^2).  Points are embedded
into the hyperplane sum(x)=0 in d+1 dimensions, splatted barycentrically onto
the enclosing lattice simplex, blurred along each lattice axis with a [1,2,1]
kernel, and sliced back.

The composite splat-blur-slice kernel is close to a Gaussian but has its own
amplitude and width; both are calibrated against direct summation and frozen
in `_GAIN` / `_WIDTH` below.  `filter` folds the calibration in so callers get
unnormalized unit-amplitude Gaussian semantics.  The lattice structure depends
only on the features, so one instance can filter many value arrays (every
mean-field iteration reuses it).
"""

from __future__ import annotations

import numpy as np

# amplitude and effective std of the composite kernel, per (dimension, blur
# passes); measured against direct summation on image-derived feature sets
# (see tests for the regression check); width is in units of the nominally
# unit-std embedding
_CALIBRATION: dict[tuple[int, int], tuple[float, float]] = {
    (5, 1): (0.00730, 1.0640),
}
DEFAULT_BLUR_PASSES = 1


def _row_view(arr: np.ndarray) -> np.ndarray:
    """View int rows as scalars so searchsorted can compare them."""
    arr = np.ascontiguousarray(arr)
    return arr.view([("", arr.dtype)] * arr.shape[1]).ravel()


class PermutohedralLattice:
    """Lattice structure for a fixed feature set; filter many value arrays."""

    def __init__(self, features: np.ndarray, blur_passes: int = DEFAULT_BLUR_PASSES):
        f = np.asarray(features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] == 0:
            raise ValueError("features must be a non-empty (n, d) array")
        n, d = f.shape
        key = (d, blur_passes)
        if key not in _CALIBRATION:
            raise ValueError(f"no calibration for d={d}, blur_passes={blur_passes}")
        self.gain, self.width = _CALIBRATION[key]
        self.n, self.d = n, d
        self.blur_passes = blur_passes

        # effective kernel is `width` stds wide; shrink features to compensate,
        # then apply the standard embedding scaling
        f = f / self.width
        inv_std = np.sqrt(2.0 / 3.0) * (d + 1)
        scale = inv_std / np.sqrt((np.arange(d) + 1.0) * (np.arange(d) + 2.0))
        cf = f * scale[None, :]

        # elevate onto the sum-zero hyperplane in d+1 dims
        elevated = np.zeros((n, d + 1))
        sm = np.zeros(n)
        for j in range(d, 0, -1):
            elevated[:, j] = sm - j * cf[:, j - 1]
            sm = sm + cf[:, j - 1]
        elevated[:, 0] = sm

        # closest remainder-0 lattice point and the rank of each coordinate
        rem0 = np.round(elevated / (d + 1)) * (d + 1)
        diff = elevated - rem0
        order = np.argsort(-diff, axis=1, kind="stable")
        rank = np.empty((n, d + 1), dtype=np.int64)
        rows = np.arange(n)[:, None]
        rank[rows, order] = np.arange(d + 1)[None, :]
        # walk back inside the canonical simplex when rounding broke sum=0
        excess = (rem0.sum(axis=1) / (d + 1)).round().astype(np.int64)
        rank += excess[:, None]
        low = rank < 0
        high = rank > d
        rank[low] += d + 1
        rem0[low] += d + 1
        rank[high] -= d + 1
        rem0[high] -= d + 1

        # barycentric coordinates from the sorted residuals
        delta = (elevated - rem0) / (d + 1)
        bary = np.zeros((n, d + 2))
        np.add.at(bary, (rows, d - rank), delta)
        np.add.at(bary, (rows, d + 1 - rank), -delta)
        bary[:, 0] += 1.0 + bary[:, d + 1]
        self.bary = bary[:, : d + 1]  # (n, d+1), rows sum to 1

        # canonical[r, rank] completes rem0 to the simplex vertex of remainder r
        canonical = np.empty((d + 1, d + 1), dtype=np.int64)
        for r in range(d + 1):
            canonical[r, : d + 1 - r] = r
            canonical[r, d + 1 - r :] = r - (d + 1)

        rem0_i = rem0[:, :d].astype(np.int64)  # drop the dependent last coord
        keys = np.concatenate(
            [rem0_i + canonical[r][rank[:, :d]] for r in range(d + 1)], axis=0
        )
        table, inverse = np.unique(keys, axis=0, return_inverse=True)
        self.m = table.shape[0]
        self.vertex_of = inverse.reshape(d + 1, n)  # [remainder, point]

        # neighbor indices along each lattice axis (-1 where unoccupied)
        tview = _row_view(table)
        self.nbr_plus = np.empty((d + 1, self.m), dtype=np.int64)
        self.nbr_minus = np.empty((d + 1, self.m), dtype=np.int64)
        for a in range(d + 1):
            off = np.ones(d, dtype=np.int64)
            if a < d:
                off[a] = -d
            # axis d changes only the dropped coordinate: offset is all ones
            for sign, dest in ((+1, self.nbr_plus), (-1, self.nbr_minus)):
                q = table + sign * off
                pos = np.searchsorted(tview, _row_view(q))
                pos = np.clip(pos, 0, self.m - 1)
                hit = (table[pos] == q).all(axis=1)
                dest[a] = np.where(hit, pos, -1)

    def filter(self, values: np.ndarray) -> np.ndarray:
        """Unnormalized Gaussian-weighted sums over all points, self included."""
        v = np.asarray(values, dtype=np.float64)
        squeeze = v.ndim == 1
        if squeeze:
            v = v[:, None]
        if v.shape[0] != self.n:
            raise ValueError("values length does not match lattice size")
        d = self.d
        vert = np.zeros((self.m + 1, v.shape[1]))  # slot m collects misses
        for r in range(d + 1):
            np.add.at(vert, self.vertex_of[r], self.bary[:, r, None] * v)
        for _ in range(self.blur_passes):
            for a in range(d + 1):
                prev = vert[:-1]
                left = np.where(
                    self.nbr_minus[a][:, None] >= 0, prev[self.nbr_minus[a]], 0.0
                )
                right = np.where(
                    self.nbr_plus[a][:, None] >= 0, prev[self.nbr_plus[a]], 0.0
                )
                vert = np.vstack(
                    [0.5 * prev + 0.25 * (left + right), vert[-1:]]
                )
        out = np.zeros_like(v)
        for r in range(d + 1):
            out += self.bary[:, r, None] * vert[:-1][self.vertex_of[r]]
        out /= self.gain
        return out[:, 0] if squeeze else out


def gaussian_filter_nd(
    features: np.ndarray, values: np.ndarray, sigma: float | np.ndarray
) -> np.ndarray:
    """One-shot helper: out_i = sum_j exp(-|Δf/sigma|^2 / 2) v_j via the lattice."""
    f = np.asarray(features, dtype=np.float64) / np.asarray(sigma, dtype=np.float64)
    return PermutohedralLattice(f).filter(values)
