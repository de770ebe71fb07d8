"""Sparse 3-D Hough voting space over rigid transforms (vx, vy, gamma).

Votes are deposited at 1 m translation cells (nearest bin) and linearly
interpolated across the two adjacent rotation bins.  Queries reconstruct
missing translation values with a truncated Gaussian kernel (sigma_t, cut at
3 sigma), which is equivalent to smoothing a dense materialization of the
space and reading one cell; rotation is linearly interpolated with
wrap-around.  Spaces are normalized to total mass 1 and immutable afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .features import Match, MatchSet
from .geometry import RigidTransform, TWO_PI

DEFAULT_ROT_BINS = 18
DEFAULT_TRANS_BIN = 1.0
DEFAULT_SMOOTH_SIGMA = 5.0
DEFAULT_ZONING_CELL = 100.0

_TILE = 2048  # cells per axis for dense smoothing tiles


class EmptyHoughSpaceError(ValueError):
    """All votes fell outside the translation extent."""


class UninformativeEstimatorError(ValueError):
    """A derived estimator slice carries zero mass."""


@dataclass(frozen=True)
class Extent:
    """Translation bounds in meters, inclusive on cell centers."""

    vx_min: float
    vx_max: float
    vy_min: float
    vy_max: float

    @classmethod
    def symmetric(cls, half_range: float) -> "Extent":
        return cls(-half_range, half_range, -half_range, half_range)

    def contains(self, vx, vy):
        return ((vx >= self.vx_min) & (vx <= self.vx_max)
                & (vy >= self.vy_min) & (vy <= self.vy_max))

    def cell_bounds(self, trans_bin: float):
        """((ix_lo, ix_hi), (iy_lo, iy_hi)) of valid cell indices."""
        return ((int(np.ceil(self.vx_min / trans_bin)), int(np.floor(self.vx_max / trans_bin))),
                (int(np.ceil(self.vy_min / trans_bin)), int(np.floor(self.vy_max / trans_bin))))


def _kernel_1d(sigma: float, trans_bin: float):
    """Normalized discrete Gaussian at integer cell offsets, cut at 3 sigma."""
    rc = int(np.floor(3.0 * sigma / trans_bin))
    offs = np.arange(-rc, rc + 1) * trans_bin
    w = np.exp(-offs ** 2 / (2.0 * sigma ** 2))
    return w / w.sum(), rc


class _KernelIndex:
    """Bucketed 2-D point set supporting truncated-Gaussian kernel sums."""

    def __init__(self, cx, cy, mass, sigma, trans_bin):
        self.sigma = sigma
        self.radius = 3.0 * sigma
        kernel, rc = _kernel_1d(sigma, trans_bin)
        self.norm = np.exp(-(np.arange(-rc, rc + 1) * trans_bin) ** 2
                           / (2 * sigma ** 2)).sum()
        self.bucket = (2 * rc + 1) * trans_bin
        self.buckets = {}
        bx = np.floor(cx / self.bucket).astype(int)
        by = np.floor(cy / self.bucket).astype(int)
        order = np.lexsort((cy, cx, by, bx))
        cx, cy, mass, bx, by = cx[order], cy[order], mass[order], bx[order], by[order]
        keys = np.stack([bx, by], axis=1)
        if len(keys):
            uniq, start = np.unique(keys, axis=0, return_index=True)
            start = np.sort(start)
            bounds = np.append(start, len(keys))
            for i in range(len(start)):
                lo, hi = bounds[i], bounds[i + 1]
                self.buckets[(bx[lo], by[lo])] = (cx[lo:hi], cy[lo:hi], mass[lo:hi])

    def _gather(self, qx, qy):
        r = self.radius
        bx0 = int(np.floor((qx - r) / self.bucket))
        bx1 = int(np.floor((qx + r) / self.bucket))
        by0 = int(np.floor((qy - r) / self.bucket))
        by1 = int(np.floor((qy + r) / self.bucket))
        parts = [self.buckets[(bx, by)]
                 for bx in range(bx0, bx1 + 1) for by in range(by0, by1 + 1)
                 if (bx, by) in self.buckets]
        if not parts:
            return None
        return (np.concatenate([p[0] for p in parts]),
                np.concatenate([p[1] for p in parts]),
                np.concatenate([p[2] for p in parts]))

    def value(self, qx: float, qy: float) -> float:
        got = self._gather(qx, qy)
        if got is None:
            return 0.0
        cx, cy, m = got
        dx = qx - cx
        dy = qy - cy
        sel = (np.abs(dx) <= self.radius) & (np.abs(dy) <= self.radius)
        if not sel.any():
            return 0.0
        s2 = 2.0 * self.sigma ** 2
        w = np.exp(-(dx[sel] ** 2) / s2) * np.exp(-(dy[sel] ** 2) / s2)
        return float((m[sel] * w).sum() / self.norm ** 2)


def _smoothed_tiles(cx, cy, mass, sigma, trans_bin):
    """Yield (ix_lo, iy_lo, dense) smoothed-dense tiles covering all points.

    dense[i, j] is the kernel-smoothed mass at cell (ix_lo + i, iy_lo + j).
    """
    kernel, rc = _kernel_1d(sigma, trans_bin)
    ix = np.rint(cx / trans_bin).astype(int)
    iy = np.rint(cy / trans_bin).astype(int)
    ix_lo, ix_hi = ix.min(), ix.max()
    iy_lo, iy_hi = iy.min(), iy.max()
    for tx in range(ix_lo, ix_hi + 1, _TILE):
        tx_hi = min(tx + _TILE - 1, ix_hi)
        selx = (ix >= tx - rc) & (ix <= tx_hi + rc)
        if not selx.any():
            continue
        for ty in range(iy_lo, iy_hi + 1, _TILE):
            ty_hi = min(ty + _TILE - 1, iy_hi)
            sel = selx & (iy >= ty - rc) & (iy <= ty_hi + rc)
            if not sel.any():
                continue
            w = tx_hi - tx + 1
            h = ty_hi - ty + 1
            grid = np.zeros((w + 2 * rc, h + 2 * rc))
            np.add.at(grid, (ix[sel] - (tx - rc), iy[sel] - (ty - rc)), mass[sel])
            grid = ndimage.convolve1d(grid, kernel, axis=0, mode="constant")
            grid = ndimage.convolve1d(grid, kernel, axis=1, mode="constant")
            yield tx, ty, grid[rc:rc + w, rc:rc + h]


def _smoothed_max(cx, cy, mass, sigma, trans_bin):
    """(max_value, ix, iy) of the kernel-smoothed field over cell centers."""
    best = (0.0, 0, 0)
    for tx, ty, dense in _smoothed_tiles(cx, cy, mass, sigma, trans_bin):
        i, j = np.unravel_index(np.argmax(dense), dense.shape)
        if dense[i, j] > best[0]:
            best = (float(dense[i, j]), tx + i, ty + j)
    return best


# ---------------------------------------------------------------------------
# voting
# ---------------------------------------------------------------------------

def vote_from_match(m: Match) -> RigidTransform:
    """Rigid transform voted by one match: gamma = theta_a - theta_b,
    v = p_b - R(gamma) p_a."""
    gamma = (m.frame_a.theta - m.frame_b.theta) % TWO_PI
    c, s = np.cos(gamma), np.sin(gamma)
    vx = m.frame_b.x - (c * m.frame_a.x - s * m.frame_a.y)
    vy = m.frame_b.y - (s * m.frame_a.x + c * m.frame_a.y)
    return RigidTransform(vx, vy, gamma)


def _votes_from_matchset(matches: MatchSet):
    """Vectorized vote transforms: (gamma, vx, vy, similarity) arrays."""
    pa = matches.positions_a()
    pb = matches.positions_b()
    gamma = (matches.thetas_a() - matches.thetas_b()) % TWO_PI
    c, s = np.cos(gamma), np.sin(gamma)
    vx = pb[:, 0] - (c * pa[:, 0] - s * pa[:, 1])
    vy = pb[:, 1] - (s * pa[:, 0] + c * pa[:, 1])
    return gamma, vx, vy, matches.similarity.copy()


class HoughSpace:
    """Normalized sparse pairwise rigid-transform probability estimator."""

    def __init__(self, ix, iy, ig, mass, extent: Extent,
                 trans_bin: float = DEFAULT_TRANS_BIN,
                 rot_bins: int = DEFAULT_ROT_BINS,
                 smooth_sigma: float = DEFAULT_SMOOTH_SIGMA):
        self.ix = np.asarray(ix, dtype=np.int64)
        self.iy = np.asarray(iy, dtype=np.int64)
        self.ig = np.asarray(ig, dtype=np.int64)
        self.mass = np.asarray(mass, dtype=float)
        self.extent = extent
        self.trans_bin = float(trans_bin)
        self.rot_bins = int(rot_bins)
        self.smooth_sigma = float(smooth_sigma)
        if len(self.mass) == 0:
            raise EmptyHoughSpaceError("Hough space has no votes")
        if np.any(self.mass <= 0):
            raise ValueError("stored masses must be positive")
        total = self.mass.sum()
        self.mass = self.mass / total
        self._indices: dict[int, _KernelIndex] = {}

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    @property
    def rot_width(self) -> float:
        return TWO_PI / self.rot_bins

    def _index(self, ig: int) -> _KernelIndex | None:
        ig = int(ig) % self.rot_bins
        if ig not in self._indices:
            sel = self.ig == ig
            if not sel.any():
                self._indices[ig] = None
            else:
                self._indices[ig] = _KernelIndex(
                    self.ix[sel] * self.trans_bin, self.iy[sel] * self.trans_bin,
                    self.mass[sel], self.smooth_sigma, self.trans_bin)
        return self._indices[ig]

    def _slice_value(self, ig: int, vx: float, vy: float) -> float:
        idx = self._index(ig)
        return 0.0 if idx is None else idx.value(vx, vy)

    def lookup(self, t: RigidTransform) -> float:
        """Smoothed probability of the transform; 0 outside the extent."""
        if not self.extent.contains(t.vx, t.vy):
            return 0.0
        pos = t.gamma / self.rot_width
        i0 = int(np.floor(pos))
        f = pos - i0
        val = (1.0 - f) * self._slice_value(i0, t.vx, t.vy)
        if f > 0:
            val += f * self._slice_value(i0 + 1, t.vx, t.vy)
        return val

    def lookup_many(self, transforms) -> np.ndarray:
        """Lookup for an iterable of RigidTransform (or an (N, 3) array)."""
        if isinstance(transforms, np.ndarray):
            transforms = [RigidTransform(*row) for row in transforms]
        return np.array([self.lookup(t) for t in transforms])

    def argmax_bin(self) -> tuple[int, int, int]:
        """(ix, iy, ig) of the largest raw stored mass."""
        i = int(np.argmax(self.mass))
        return int(self.ix[i]), int(self.iy[i]), int(self.ig[i])

    def argmax_transform(self) -> RigidTransform:
        """Transform at the cell with maximal smoothed mass."""
        best = (-1.0, 0, 0, 0)
        for ig in range(self.rot_bins):
            sel = self.ig == ig
            if not sel.any():
                continue
            val, bx, by = _smoothed_max(
                self.ix[sel] * self.trans_bin, self.iy[sel] * self.trans_bin,
                self.mass[sel], self.smooth_sigma, self.trans_bin)
            if val > best[0]:
                best = (val, bx, by, ig)
        return RigidTransform(best[1] * self.trans_bin, best[2] * self.trans_bin,
                              best[3] * self.rot_width)

    def sample_transforms(self, rng: np.random.Generator, n: int) -> list[RigidTransform]:
        """Sample stored bins proportionally to their mass."""
        idx = rng.choice(len(self.mass), size=n, p=self.mass)
        return [RigidTransform(self.ix[i] * self.trans_bin, self.iy[i] * self.trans_bin,
                               self.ig[i] * self.rot_width) for i in idx]


def build_hough_space(matches: MatchSet, extent: Extent,
                      zoning_cell: float = DEFAULT_ZONING_CELL,
                      trans_bin: float = DEFAULT_TRANS_BIN,
                      rot_bins: int = DEFAULT_ROT_BINS,
                      smooth_sigma: float = DEFAULT_SMOOTH_SIGMA) -> HoughSpace:
    """Accumulate zoned votes into a normalized sparse space.

    Per pair of zoning cells only the highest-similarity match contributes.
    Votes whose translation cell falls outside the extent are dropped; if all
    are dropped an EmptyHoughSpaceError is raised.
    """
    if len(matches) == 0:
        raise ValueError("match set is empty")
    pa = matches.positions_a()
    pb = matches.positions_b()
    zones = np.stack([
        np.floor(pa[:, 0] / zoning_cell), np.floor(pa[:, 1] / zoning_cell),
        np.floor(pb[:, 0] / zoning_cell), np.floor(pb[:, 1] / zoning_cell),
    ], axis=1).astype(np.int64)
    # matches are sorted by descending similarity: the first occurrence of a
    # zone pair is the strongest vote between those two image areas
    _, keep = np.unique(zones, axis=0, return_index=True)
    keep = np.sort(keep)

    gamma, vx, vy, sim = _votes_from_matchset(matches)
    gamma, vx, vy, sim = gamma[keep], vx[keep], vy[keep], sim[keep]

    ix = np.rint(vx / trans_bin).astype(np.int64)
    iy = np.rint(vy / trans_bin).astype(np.int64)
    inside = extent.contains(ix * trans_bin, iy * trans_bin)
    if not inside.any():
        raise EmptyHoughSpaceError("all votes fall outside the translation extent")
    ix, iy, sim, gamma = ix[inside], iy[inside], sim[inside], gamma[inside]

    rot_width = TWO_PI / rot_bins
    pos = gamma / rot_width
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    all_ix = np.concatenate([ix, ix])
    all_iy = np.concatenate([iy, iy])
    all_ig = np.concatenate([i0 % rot_bins, (i0 + 1) % rot_bins])
    all_mass = np.concatenate([sim * (1 - frac), sim * frac])
    nz = all_mass > 0
    all_ix, all_iy, all_ig, all_mass = all_ix[nz], all_iy[nz], all_ig[nz], all_mass[nz]

    keys = np.stack([all_ix, all_iy, all_ig], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    mass = np.zeros(len(uniq))
    np.add.at(mass, inv, all_mass)
    return HoughSpace(uniq[:, 0], uniq[:, 1], uniq[:, 2], mass, extent,
                      trans_bin, rot_bins, smooth_sigma)


# ---------------------------------------------------------------------------
# derived estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RotationEstimator:
    """Per-rotation-bin max-pooled probabilities, normalized to sum 1."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def rot_bins(self) -> int:
        return len(self.probs)

    def value(self, gamma: float) -> float:
        """Linearly interpolated probability, wrap-around in gamma."""
        width = TWO_PI / self.rot_bins
        pos = (float(gamma) % TWO_PI) / width
        i0 = int(np.floor(pos))
        f = pos - i0
        return float((1 - f) * self.probs[i0 % self.rot_bins]
                     + f * self.probs[(i0 + 1) % self.rot_bins])

    def value_many(self, gammas) -> np.ndarray:
        width = TWO_PI / self.rot_bins
        pos = (np.asarray(gammas, float) % TWO_PI) / width
        i0 = np.floor(pos).astype(int)
        f = pos - i0
        return ((1 - f) * self.probs[i0 % self.rot_bins]
                + f * self.probs[(i0 + 1) % self.rot_bins])

    def argmax_gamma(self) -> float:
        return float(np.argmax(self.probs)) * TWO_PI / self.rot_bins

    def max_prob(self) -> float:
        return float(self.probs.max())


def rotation_estimator(h: HoughSpace) -> RotationEstimator:
    """Max-pool the smoothed space over the translation dims, renormalize."""
    probs = np.zeros(h.rot_bins)
    for ig in range(h.rot_bins):
        sel = h.ig == ig
        if not sel.any():
            continue
        probs[ig] = _smoothed_max(
            h.ix[sel] * h.trans_bin, h.iy[sel] * h.trans_bin, h.mass[sel],
            h.smooth_sigma, h.trans_bin)[0]
    total = probs.sum()
    if total <= 0:
        raise UninformativeEstimatorError("rotation estimator has zero mass")
    return RotationEstimator(probs / total)


class TranslationEstimator:
    """Normalized 2-D translation estimator at a fixed rotation."""

    def __init__(self, ix, iy, mass, extent: Extent, trans_bin: float,
                 smooth_sigma: float):
        self.ix = np.asarray(ix, dtype=np.int64)
        self.iy = np.asarray(iy, dtype=np.int64)
        mass = np.asarray(mass, dtype=float)
        total = mass.sum()
        if len(mass) == 0 or total <= 0:
            raise UninformativeEstimatorError("translation slice has zero mass")
        self.mass = mass / total
        self.extent = extent
        self.trans_bin = float(trans_bin)
        self.smooth_sigma = float(smooth_sigma)
        self._index = _KernelIndex(self.ix * self.trans_bin, self.iy * self.trans_bin,
                                   self.mass, smooth_sigma, self.trans_bin)
        self._dense = None

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def value(self, vx: float, vy: float) -> float:
        if not self.extent.contains(vx, vy):
            return 0.0
        return self._index.value(vx, vy)

    def value_many(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, float)
        return np.array([self.value(p[0], p[1]) for p in v])

    def argmax(self) -> tuple[float, float, float]:
        """(vx, vy, value) of the maximal smoothed translation cell."""
        val, bx, by = _smoothed_max(self.ix * self.trans_bin, self.iy * self.trans_bin,
                                    self.mass, self.smooth_sigma, self.trans_bin)
        return bx * self.trans_bin, by * self.trans_bin, val

    def dense(self, max_cells: int = 8_000_000):
        """Smoothed dense grid over the extent, or None if too large.

        Returns (grid, ix_lo, iy_lo) with grid[i, j] the smoothed mass at cell
        (ix_lo + i, iy_lo + j).
        """
        if self._dense is not None:
            return self._dense
        (ix_lo, ix_hi), (iy_lo, iy_hi) = self.extent.cell_bounds(self.trans_bin)
        nx, ny = ix_hi - ix_lo + 1, iy_hi - iy_lo + 1
        if nx * ny > max_cells:
            return None
        kernel, rc = _kernel_1d(self.smooth_sigma, self.trans_bin)
        grid = np.zeros((nx + 2 * rc, ny + 2 * rc))
        inside = ((self.ix >= ix_lo - rc) & (self.ix <= ix_hi + rc)
                  & (self.iy >= iy_lo - rc) & (self.iy <= iy_hi + rc))
        np.add.at(grid, (self.ix[inside] - (ix_lo - rc),
                         self.iy[inside] - (iy_lo - rc)), self.mass[inside])
        grid = ndimage.convolve1d(grid, kernel, axis=0, mode="constant")
        grid = ndimage.convolve1d(grid, kernel, axis=1, mode="constant")
        self._dense = (grid[rc:rc + nx, rc:rc + ny], ix_lo, iy_lo)
        return self._dense


def translation_estimator(h: HoughSpace, fixed_gamma: float) -> TranslationEstimator:
    """Rotation-interpolated 2-D slice of the space, renormalized to sum 1."""
    pos = (float(fixed_gamma) % TWO_PI) / h.rot_width
    i0 = int(np.floor(pos))
    f = pos - i0
    parts = []
    for ig, w in ((i0 % h.rot_bins, 1 - f), ((i0 + 1) % h.rot_bins, f)):
        if w <= 0:
            continue
        sel = h.ig == ig
        if sel.any():
            parts.append((h.ix[sel], h.iy[sel], h.mass[sel] * w))
    if not parts:
        raise UninformativeEstimatorError("translation slice has zero mass")
    ix = np.concatenate([p[0] for p in parts])
    iy = np.concatenate([p[1] for p in parts])
    mass = np.concatenate([p[2] for p in parts])
    keys = np.stack([ix, iy], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inv, mass)
    return TranslationEstimator(uniq[:, 0], uniq[:, 1], merged, h.extent,
                                h.trans_bin, h.smooth_sigma)
