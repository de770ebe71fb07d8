"""Local features: dense sampling, DoG keypoint detection, SIFT-style
descriptors, exhaustive top-K matching and distance-ratio matching.

Descriptors are 128-dim gradient-orientation histograms (4x4 spatial cells x 8
orientation bins, trilinear soft binning, 0.2 clamp).  A feature frame's sigma
is a support-region radius proxy: the descriptor window spans
support_scale * sigma (support_scale = 2 for dense frames, so the window
equals the dense support region).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

from .image import ImageGrid

DESCRIPTOR_SIZE = 128
N_SPATIAL = 4           # spatial cells per axis
N_ORI = 8               # orientation bins per cell
N_SAMPLES = 16          # descriptor samples per axis
CLAMP = 0.2
EPS_DIV = 1e-6          # similarity guard for exact-duplicate descriptors
ORI_BINS = 36

DOG_SUPPORT_SCALE = 8.0  # descriptor window for detected keypoints, in sigmas


@dataclass(frozen=True)
class FeatureFrame:
    """Local feature geometry: center-origin position, scale and orientation."""

    x: float
    y: float
    sigma: float
    theta: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


class FeatureSet:
    """Frames plus their descriptors, stored columnar for vectorized access."""

    def __init__(self, x, y, sigma, theta, descriptors):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.theta = np.asarray(theta, dtype=float)
        self.descriptors = np.asarray(descriptors, dtype=np.float32)
        n = len(self.x)
        if self.descriptors.shape != (n, DESCRIPTOR_SIZE):
            raise ValueError("descriptor array shape mismatch")

    def __len__(self) -> int:
        return len(self.x)

    def frame(self, i: int) -> FeatureFrame:
        return FeatureFrame(self.x[i], self.y[i], self.sigma[i], self.theta[i])

    def positions(self) -> np.ndarray:
        return np.stack([self.x, self.y], axis=1)

    @classmethod
    def empty(cls) -> "FeatureSet":
        return cls([], [], [], [], np.zeros((0, DESCRIPTOR_SIZE), np.float32))

    @classmethod
    def from_frames(cls, frames, descriptors) -> "FeatureSet":
        return cls(
            [f.x for f in frames], [f.y for f in frames],
            [f.sigma for f in frames], [f.theta for f in frames],
            descriptors,
        )


@dataclass(frozen=True)
class Match:
    frame_a: FeatureFrame
    frame_b: FeatureFrame
    similarity: float


class MatchSet:
    """Top-K matches between two feature sets, sorted by descending similarity."""

    def __init__(self, feats_a: FeatureSet, feats_b: FeatureSet, ia, ib, similarity):
        self.feats_a = feats_a
        self.feats_b = feats_b
        self.ia = np.asarray(ia, dtype=np.int64)
        self.ib = np.asarray(ib, dtype=np.int64)
        self.similarity = np.asarray(similarity, dtype=float)
        if np.any(np.diff(self.similarity) > 0):
            raise ValueError("matches must be sorted by descending similarity")

    def __len__(self) -> int:
        return len(self.ia)

    def __getitem__(self, i: int) -> Match:
        return Match(self.feats_a.frame(self.ia[i]), self.feats_b.frame(self.ib[i]),
                     float(self.similarity[i]))

    def positions_a(self) -> np.ndarray:
        return np.stack([self.feats_a.x[self.ia], self.feats_a.y[self.ia]], axis=1)

    def positions_b(self) -> np.ndarray:
        return np.stack([self.feats_b.x[self.ib], self.feats_b.y[self.ib]], axis=1)

    def thetas_a(self) -> np.ndarray:
        return self.feats_a.theta[self.ia]

    def thetas_b(self) -> np.ndarray:
        return self.feats_b.theta[self.ib]


# ---------------------------------------------------------------------------
# descriptor machinery
# ---------------------------------------------------------------------------

def _gradients_for_spacing(img: ImageGrid, spacing_px: float):
    """Anti-aliased image gradients for a given sample spacing (pixels)."""
    sigma_blur = max(0.5, 0.6 * spacing_px)
    blurred = cv2.GaussianBlur(img.pixels, (0, 0), sigmaX=sigma_blur, sigmaY=sigma_blur)
    gy, gx = np.gradient(blurred)
    return gx, gy


def _sample_grads(gx, gy, coords_px):
    """Bilinear gradient sampling at (..., 2) pixel (col, row) coordinates."""
    cols = coords_px[..., 0].ravel()
    rows = coords_px[..., 1].ravel()
    sx = ndimage.map_coordinates(gx, [rows, cols], order=1, mode="nearest")
    sy = ndimage.map_coordinates(gy, [rows, cols], order=1, mode="nearest")
    shape = coords_px.shape[:-1]
    return sx.reshape(shape), sy.reshape(shape)


def _descriptor_grid():
    """Normalized sample offsets in cell units, u,v in [-2, 2)."""
    t = (np.arange(N_SAMPLES) + 0.5) / N_SAMPLES * N_SPATIAL - N_SPATIAL / 2
    u, v = np.meshgrid(t, t, indexing="xy")
    return u.ravel(), v.ravel()


def _descriptors_group(img: ImageGrid, x, y, sigma_px, theta, support_scale):
    """Descriptors for frames sharing one sigma (in pixels).  Returns (F, 128)."""
    F = len(x)
    window = support_scale * sigma_px           # full window width, px
    cell = window / N_SPATIAL
    spacing = window / N_SAMPLES
    gx, gy = _gradients_for_spacing(img, spacing)

    u, v = _descriptor_grid()                   # (S2,)
    # theta is stored clockwise; the image-frame rotation angle is -theta
    rot = -np.asarray(theta)[:, None]
    ox = u[None, :] * cell
    oy = v[None, :] * cell
    c, s = np.cos(rot), np.sin(rot)
    dx = c * ox - s * oy
    dy = s * ox + c * oy
    centers = img.to_pixel(np.stack([x, y], axis=1))        # (F, 2) col,row
    coords = np.stack([centers[:, 0:1] + dx, centers[:, 1:2] + dy], axis=-1)
    sx, sy = _sample_grads(gx, gy, coords)                  # (F, S2)

    mag = np.hypot(sx, sy)
    ang = np.arctan2(sy, sx) - rot
    w = np.exp(-(u ** 2 + v ** 2) / (2.0 * (N_SPATIAL / 2) ** 2))
    contrib = mag * w[None, :]

    # trilinear soft binning into (4, 4, 8)
    r = v + N_SPATIAL / 2 - 0.5                 # spatial row bin coordinate
    cbin = u + N_SPATIAL / 2 - 0.5
    obin = (ang % (2 * np.pi)) / (2 * np.pi / N_ORI)
    desc = np.zeros((F, N_SPATIAL, N_SPATIAL, N_ORI))
    fidx = np.broadcast_to(np.arange(F)[:, None], contrib.shape)
    r0 = np.broadcast_to(np.floor(r).astype(int), contrib.shape)
    c0 = np.broadcast_to(np.floor(cbin).astype(int), contrib.shape)
    o0 = np.floor(obin).astype(int)
    fr = np.broadcast_to(r - np.floor(r), contrib.shape)
    fc = np.broadcast_to(cbin - np.floor(cbin), contrib.shape)
    fo = obin - o0
    for dr, wr in ((0, 1 - fr), (1, fr)):
        ri = r0 + dr
        okr = (ri >= 0) & (ri < N_SPATIAL)
        for dc, wc in ((0, 1 - fc), (1, fc)):
            ci = c0 + dc
            sel = okr & (ci >= 0) & (ci < N_SPATIAL)
            for do, wo in ((0, 1 - fo), (1, fo)):
                oi = (o0 + do) % N_ORI
                wgt = contrib * wr * wc * wo
                np.add.at(desc, (fidx[sel], ri[sel], ci[sel], oi[sel]), wgt[sel])

    desc = desc.reshape(F, DESCRIPTOR_SIZE)
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    nz = norms[:, 0] > 0
    desc[nz] /= norms[nz]
    np.clip(desc, 0.0, CLAMP, out=desc)
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    nz = norms[:, 0] > 0
    desc[nz] /= norms[nz]
    return desc.astype(np.float32)


def _dominant_orientations(img: ImageGrid, x, y, sigma_px, support_scale):
    """36-bin Gaussian-weighted gradient-orientation peak per frame, radians."""
    F = len(x)
    window = support_scale * sigma_px
    spacing = window / N_SAMPLES
    gx, gy = _gradients_for_spacing(img, spacing)

    u, v = _descriptor_grid()
    ox = u[None, :] * (window / N_SPATIAL)
    oy = v[None, :] * (window / N_SPATIAL)
    centers = img.to_pixel(np.stack([x, y], axis=1))
    coords = np.stack(
        [centers[:, 0:1] + np.broadcast_to(ox, (F, ox.shape[1])),
         centers[:, 1:2] + np.broadcast_to(oy, (F, oy.shape[1]))], axis=-1)
    sx, sy = _sample_grads(gx, gy, coords)
    mag = np.hypot(sx, sy)
    w = np.exp(-(u ** 2 + v ** 2) / (2.0 * (N_SPATIAL / 2) ** 2))
    contrib = mag * w[None, :]
    ang = np.arctan2(sy, sx) % (2 * np.pi)

    width = 2 * np.pi / ORI_BINS
    pos = ang / width - 0.5
    i0 = np.floor(pos).astype(int)
    frac = pos - i0
    hist = np.zeros((F, ORI_BINS))
    fidx = np.broadcast_to(np.arange(F)[:, None], contrib.shape)
    np.add.at(hist, (fidx, i0 % ORI_BINS), contrib * (1 - frac))
    np.add.at(hist, (fidx, (i0 + 1) % ORI_BINS), contrib * frac)

    # circular smoothing, twice
    kernel = np.array([1, 4, 6, 4, 1]) / 16.0
    for _ in range(2):
        hist = sum(kernel[j + 2] * np.roll(hist, j, axis=1) for j in range(-2, 3))

    peak = np.argmax(hist, axis=1)
    idx = np.arange(F)
    hp = hist[idx, peak]
    hl = hist[idx, (peak - 1) % ORI_BINS]
    hr = hist[idx, (peak + 1) % ORI_BINS]
    denom = hl - 2 * hp + hr
    delta = np.where(np.abs(denom) > 1e-12, 0.5 * (hl - hr) / np.where(denom == 0, 1, denom), 0.0)
    phi = (peak + delta + 0.5) * width          # dominant gradient direction
    # orientations are stored in the clockwise convention so that the Hough
    # vote rotation theta_a - theta_b equals the a->b image rotation
    theta = (-phi) % (2 * np.pi)
    theta[hist.sum(axis=1) <= 0] = 0.0
    return theta


def compute_descriptors(img: ImageGrid, x, y, sigma, theta,
                        support_scale: float = 2.0) -> np.ndarray:
    """Descriptors for arbitrary frames; frames are grouped by sigma."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    sigma = np.asarray(sigma, float)
    theta = np.asarray(theta, float)
    out = np.zeros((len(x), DESCRIPTOR_SIZE), np.float32)
    for s in np.unique(sigma):
        sel = sigma == s
        out[sel] = _descriptors_group(
            img, x[sel], y[sel], s / img.meters_per_px, theta[sel], support_scale)
    return out


def compute_descriptor_at(img: ImageGrid, frame: FeatureFrame, forced_theta: float,
                          support_scale: float = 2.0) -> np.ndarray:
    """Single descriptor with the orientation fixed to forced_theta.

    Raises ValueError if the axis-aligned support box pokes outside the image.
    """
    wm, hm = img.extent_m
    half = support_scale * frame.sigma / 2.0
    if (abs(frame.x) + half > wm / 2.0) or (abs(frame.y) + half > hm / 2.0):
        raise ValueError("frame support extends outside the image")
    return compute_descriptors(
        img, [frame.x], [frame.y], [frame.sigma], [forced_theta], support_scale)[0]


# ---------------------------------------------------------------------------
# dense sampling
# ---------------------------------------------------------------------------

def dense_grid_shape(width_m: float, height_m: float, step: float, support: float,
                     meters_per_px: float = 1.0):
    """Number of dense frames per axis.

    Frame centers live on pixel centers, so the usable span per axis is the
    pixel-center extent (width - 1 px) minus the support:
    floor((span - support) / step) + 1.
    """
    nx = int(np.floor((width_m - meters_per_px - support) / step)) + 1
    ny = int(np.floor((height_m - meters_per_px - support) / step)) + 1
    return max(nx, 0), max(ny, 0)


def dense_sample(img: ImageGrid, step: float, support: float) -> FeatureSet:
    """Regular-grid frames with sigma = support/2 and dominant-gradient theta.

    Zero-gradient-energy frames (all-zero descriptors) are excluded.
    """
    if step < 1:
        raise ValueError("step must be >= 1 meter")
    if support < 8 * img.meters_per_px:
        raise ValueError("support must be at least 8 pixels")
    wm, hm = img.extent_m
    nx, ny = dense_grid_shape(wm, hm, step, support, img.meters_per_px)
    if nx == 0 or ny == 0:
        warnings.warn("image smaller than the support region; no dense features")
        return FeatureSet.empty()

    xs = -(wm - img.meters_per_px) / 2 + support / 2 + step * np.arange(nx)
    ys = -(hm - img.meters_per_px) / 2 + support / 2 + step * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    x = gx.ravel()
    y = gy.ravel()
    sigma = np.full_like(x, support / 2.0)
    sigma_px = support / 2.0 / img.meters_per_px

    theta = _dominant_orientations(img, x, y, sigma_px, support_scale=2.0)
    desc = _descriptors_group(img, x, y, sigma_px, theta, support_scale=2.0)
    keep = np.linalg.norm(desc, axis=1) > 0
    return FeatureSet(x[keep], y[keep], sigma[keep], theta[keep], desc[keep])


# ---------------------------------------------------------------------------
# DoG keypoint detection
# ---------------------------------------------------------------------------

DOG_SIGMA0 = 1.6
DOG_SCALES_PER_OCTAVE = 3
DOG_CONTRAST_THRESHOLD = 0.015
DOG_EDGE_RATIO = 10.0


def _octave_extrema(dogs: np.ndarray, border: int = 5):
    """Scale-space extrema of a (L, H, W) DoG stack; interior layers only."""
    absd = np.abs(dogs)
    maxf = ndimage.maximum_filter(dogs, size=3, mode="nearest")
    minf = ndimage.minimum_filter(dogs, size=3, mode="nearest")
    cand = ((dogs == maxf) | (dogs == minf)) & (absd > 0.8 * DOG_CONTRAST_THRESHOLD)
    cand[0] = cand[-1] = False
    cand[:, :border] = cand[:, -border:] = False
    cand[:, :, :border] = cand[:, :, -border:] = False
    return np.argwhere(cand)


def _refine_extremum(dogs: np.ndarray, layer: int, row: int, col: int):
    """Quadratic subpixel refinement; returns (layer_f, row_f, col_f, value) or None."""
    L, H, W = dogs.shape
    for _ in range(3):
        d = dogs[layer]
        grad = 0.5 * np.array([
            dogs[layer + 1, row, col] - dogs[layer - 1, row, col],
            d[row + 1, col] - d[row - 1, col],
            d[row, col + 1] - d[row, col - 1],
        ])
        dss = dogs[layer + 1, row, col] - 2 * d[row, col] + dogs[layer - 1, row, col]
        drr = d[row + 1, col] - 2 * d[row, col] + d[row - 1, col]
        dcc = d[row, col + 1] - 2 * d[row, col] + d[row, col - 1]
        dsr = 0.25 * (dogs[layer + 1, row + 1, col] - dogs[layer + 1, row - 1, col]
                      - dogs[layer - 1, row + 1, col] + dogs[layer - 1, row - 1, col])
        dsc = 0.25 * (dogs[layer + 1, row, col + 1] - dogs[layer + 1, row, col - 1]
                      - dogs[layer - 1, row, col + 1] + dogs[layer - 1, row, col - 1])
        drc = 0.25 * (d[row + 1, col + 1] - d[row + 1, col - 1]
                      - d[row - 1, col + 1] + d[row - 1, col - 1])
        hess = np.array([[dss, dsr, dsc], [dsr, drr, drc], [dsc, drc, dcc]])
        try:
            offset = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            value = d[row, col] + 0.5 * grad @ offset
            if abs(value) < DOG_CONTRAST_THRESHOLD:
                return None
            r = DOG_EDGE_RATIO
            tr, det = drr + dcc, drr * dcc - drc * drc
            if det <= 0 or tr * tr / det >= (r + 1) ** 2 / r:
                return None
            return layer + offset[0], row + offset[1], col + offset[2], value
        layer = int(np.clip(layer + np.rint(offset[0]), 1, L - 2))
        row = int(np.clip(row + np.rint(offset[1]), 1, H - 2))
        col = int(np.clip(col + np.rint(offset[2]), 1, W - 2))
    return None


def detect_dog_keypoints(img: ImageGrid) -> list[FeatureFrame]:
    """Difference-of-Gaussians scale-space keypoints with dominant orientation.

    Frame sigma is the detected DoG scale (in meters); descriptor support for
    these frames should use DOG_SUPPORT_SCALE.
    """
    if img.width < 64 or img.height < 64:
        raise ValueError("image must be at least 64x64")
    s = DOG_SCALES_PER_OCTAVE
    k = 2.0 ** (1.0 / s)
    base = img.pixels.astype(float)
    # assume the raw image has sigma ~0.5; lift it to sigma0
    sig_diff = np.sqrt(max(DOG_SIGMA0 ** 2 - 0.5 ** 2, 0.01))
    current = cv2.GaussianBlur(base, (0, 0), sig_diff)

    found = []  # (x_m, y_m, sigma_m)
    octave = 0
    while min(current.shape) >= 16:
        gaussians = [current]
        for i in range(1, s + 3):
            prev_sig = DOG_SIGMA0 * k ** (i - 1)
            inc = prev_sig * np.sqrt(k * k - 1.0)
            gaussians.append(cv2.GaussianBlur(gaussians[-1], (0, 0), inc))
        dogs = np.stack([gaussians[i + 1] - gaussians[i] for i in range(s + 2)])

        scale_px = 2 ** octave
        for layer, row, col in _octave_extrema(dogs):
            ref = _refine_extremum(dogs, layer, row, col)
            if ref is None:
                continue
            lf, rf, cf = ref[0], ref[1], ref[2]
            col_base = cf * scale_px
            row_base = rf * scale_px
            xy = img.to_meters([col_base, row_base])
            sigma_m = DOG_SIGMA0 * (2.0 ** (octave + lf / s)) * img.meters_per_px
            found.append((xy[0], xy[1], sigma_m))

        current = gaussians[s][::2, ::2]
        octave += 1

    if not found:
        return []
    arr = np.array(found)
    # keep frames whose descriptor support stays inside the image
    wm, hm = img.extent_m
    half = DOG_SUPPORT_SCALE * arr[:, 2] / 2.0
    ok = (np.abs(arr[:, 0]) + half <= wm / 2) & (np.abs(arr[:, 1]) + half <= hm / 2)
    arr = arr[ok]
    if len(arr) == 0:
        return []
    # deterministic order
    order = np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0]))
    arr = arr[order]

    frames = []
    for sig in np.unique(arr[:, 2]):
        sel = arr[:, 2] == sig
        theta = _dominant_orientations(
            img, arr[sel, 0], arr[sel, 1], sig / img.meters_per_px,
            support_scale=DOG_SUPPORT_SCALE)
        for (x, y, sg), th in zip(arr[sel], theta):
            frames.append(FeatureFrame(x, y, sg, th))
    frames.sort(key=lambda f: (f.x, f.y, f.sigma))
    return frames


def describe_keypoints(img: ImageGrid, frames: list[FeatureFrame],
                       forced_theta: float | None = None) -> FeatureSet:
    """Descriptors for detected keypoints (window = DOG_SUPPORT_SCALE sigmas)."""
    if not frames:
        return FeatureSet.empty()
    x = np.array([f.x for f in frames])
    y = np.array([f.y for f in frames])
    sigma = np.array([f.sigma for f in frames])
    if forced_theta is None:
        theta = np.array([f.theta for f in frames])
    else:
        theta = np.full(len(frames), float(forced_theta) % (2 * np.pi))
    desc = compute_descriptors(img, x, y, sigma, theta,
                               support_scale=DOG_SUPPORT_SCALE)
    return FeatureSet(x, y, sigma, theta, desc)


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------

def _squared_distances(da: np.ndarray, db: np.ndarray) -> np.ndarray:
    """Pairwise squared L2 distances, float32 inputs accumulated in float64."""
    a = da.astype(np.float64)
    b = db.astype(np.float64)
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def top_k_matches(feats_a: FeatureSet, feats_b: FeatureSet, k: int) -> MatchSet:
    """The k cross-product pairs with highest similarity 1/(d + EPS_DIV).

    Ties are broken by lexicographic (index_a, index_b) order.
    """
    if len(feats_a) == 0 or len(feats_b) == 0:
        raise ValueError("both feature sets must be non-empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    d2 = _squared_distances(feats_a.descriptors, feats_b.descriptors)
    flat = d2.ravel()
    n = flat.size
    if k >= n:
        chosen = np.argsort(flat, kind="stable")
    else:
        part = np.argpartition(flat, k - 1)[:k]
        thr = flat[part].max()
        cand = np.flatnonzero(flat <= thr)
        chosen = cand[np.argsort(flat[cand], kind="stable")][:k]
    ia, ib = np.unravel_index(chosen, d2.shape)
    sim = 1.0 / (np.sqrt(flat[chosen]) + EPS_DIV)
    return MatchSet(feats_a, feats_b, ia, ib, sim)


def distance_ratio_match(feats_a: FeatureSet, feats_b: FeatureSet,
                         tau: float) -> MatchSet:
    """Nearest-neighbor matches passing the d1/d2 < tau ratio test."""
    if len(feats_b) < 2:
        raise ValueError("need at least two features in B for the ratio test")
    if not (0 < tau < 1):
        raise ValueError("tau must be in (0, 1)")
    d2 = _squared_distances(feats_a.descriptors, feats_b.descriptors)
    nearest = np.argmin(d2, axis=1)
    d1sq = d2[np.arange(len(feats_a)), nearest]
    d2p = np.partition(d2, 1, axis=1)
    second_sq = d2p[:, 1]
    d1 = np.sqrt(d1sq)
    dsecond = np.sqrt(second_sq)
    accept = np.zeros(len(feats_a), bool)
    pos = dsecond > 0
    accept[pos] = d1[pos] / dsecond[pos] < tau
    ia = np.flatnonzero(accept)
    sim = 1.0 / (d1[ia] + EPS_DIV)
    order = np.lexsort((nearest[ia], ia, -sim))
    ia = ia[order]
    return MatchSet(feats_a, feats_b, ia, nearest[ia], sim[order])
