"""Synthetic scenario generation for desk-scale verification.

A procedural world texture (multi-octave value noise thresholded into
road-like ridges) is sampled to produce a reference image and N historical
images related to it by planted rigid transforms, optionally with per-image
scale drift and corruption (occlusion, brightness shift, sensor noise).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import RigidTransform, apply_rigid, invert_rigid, rotation_matrix
from .image import ImageGrid


class InfeasibleScenarioError(ValueError):
    """A planted transform pushes image/reference overlap below 25%."""


@dataclass(frozen=True)
class Corruption:
    occlusion_fraction: float = 0.0
    brightness_delta: float = 0.0
    noise_sigma: float = 0.0


@dataclass(frozen=True)
class SyntheticScenario:
    """Specification of a planted multi-image registration problem.

    transforms map each historical image into the reference frame; scale
    drifts (applied on top of the rigid map) must stay within [0.7, 1.3].
    A changed-world region can be planted inside one image's footprint to
    destroy its direct relation to the reference while keeping its relations
    to sibling images intact.
    """

    image_size: int
    transforms: tuple
    texture_seed: int = 0
    corruption: Corruption = field(default_factory=Corruption)
    scale_drifts: tuple = ()
    change_image: int | None = None
    change_fraction: float = 0.0

    def __post_init__(self):
        drifts = self.scale_drifts or tuple(1.0 for _ in self.transforms)
        if len(drifts) != len(self.transforms):
            raise ValueError("scale_drifts length must match transforms")
        if any(not (0.7 <= s <= 1.3) for s in drifts):
            raise ValueError("scale drift must lie in [0.7, 1.3]")
        object.__setattr__(self, "scale_drifts", tuple(drifts))
        object.__setattr__(self, "transforms", tuple(self.transforms))


@dataclass
class ScenarioData:
    reference: ImageGrid
    historical: list
    transforms: list
    scale_drifts: list
    ground_truth: dict      # image index -> (M, 2, 2): [(hist_xy, ref_xy)]


def value_noise(size: int, rng: np.random.Generator, octaves: int = 5,
                base_cells: int = 4) -> np.ndarray:
    """Multi-octave value noise in [0, 1]."""
    out = np.zeros((size, size))
    amp_total = 0.0
    for o in range(octaves):
        cells = base_cells * 2 ** o
        amp = 0.55 ** o
        coarse = rng.random((cells + 1, cells + 1))
        coords = np.linspace(0, cells, size)
        cc, rr = np.meshgrid(coords, coords, indexing="xy")
        layer = ndimage.map_coordinates(coarse, [rr.ravel(), cc.ravel()],
                                        order=3, mode="nearest").reshape(size, size)
        out += amp * layer
        amp_total += amp
    out /= amp_total
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo + 1e-12)


def road_texture(size: int, seed: int) -> np.ndarray:
    """Orientation-rich texture: value noise plus ridge lines along noise
    level sets (road-like structure)."""
    rng = np.random.default_rng(seed)
    n = value_noise(size, rng)
    ridges = np.zeros_like(n)
    for iso, width in ((0.35, 0.012), (0.5, 0.010), (0.65, 0.012)):
        ridges = np.maximum(ridges, np.exp(-((n - iso) ** 2) / (2 * width ** 2)))
    tex = 0.55 * n + 0.45 * ridges
    lo, hi = tex.min(), tex.max()
    return (tex - lo) / (hi - lo + 1e-12)


def _world_coords_of_image(size: int, t: RigidTransform, scale: float):
    """World (center-origin) coordinates sampled by each pixel of an image
    related to the world by p_world = scale * R(gamma) q + v."""
    c = (size - 1) / 2.0
    cols, rows = np.meshgrid(np.arange(size), np.arange(size), indexing="xy")
    q = np.stack([cols - c, rows - c], axis=-1).reshape(-1, 2)
    p = scale * (q @ rotation_matrix(t.gamma).T) + t.translation
    return p.reshape(size, size, 2)


def _sample_world(world: np.ndarray, coords_world: np.ndarray) -> np.ndarray:
    c = (world.shape[0] - 1) / 2.0
    cols = coords_world[..., 0] + c
    rows = coords_world[..., 1] + c
    return ndimage.map_coordinates(world, [rows.ravel(), cols.ravel()],
                                   order=1, mode="nearest").reshape(coords_world.shape[:2])


def _occlude(img: np.ndarray, fraction: float, rng: np.random.Generator,
             alt: np.ndarray) -> np.ndarray:
    """Cover approximately `fraction` of the area with alternate-texture
    rectangles."""
    if fraction <= 0:
        return img
    size = img.shape[0]
    covered = np.zeros(img.shape, bool)
    out = img.copy()
    target = fraction * img.size
    for _ in range(1000):
        if covered.sum() >= target:
            break
        w = rng.integers(size // 10, size // 3)
        h = rng.integers(size // 10, size // 3)
        r0 = rng.integers(0, size - h)
        c0 = rng.integers(0, size - w)
        out[r0:r0 + h, c0:c0 + w] = alt[r0:r0 + h, c0:c0 + w]
        covered[r0:r0 + h, c0:c0 + w] = True
    return out


def _footprint_mask(world_size: int, image_size: int, t: RigidTransform,
                    scale: float) -> np.ndarray:
    """World pixels that lie inside the given image's footprint."""
    c = (world_size - 1) / 2.0
    cols, rows = np.meshgrid(np.arange(world_size), np.arange(world_size), indexing="xy")
    p = np.stack([cols - c, rows - c], axis=-1).reshape(-1, 2)
    inv = invert_rigid(t)
    q = apply_rigid(inv, p) / scale
    half = image_size / 2.0
    inside = (np.abs(q[:, 0]) <= half) & (np.abs(q[:, 1]) <= half)
    return inside.reshape(world_size, world_size)


def generate_scenario(spec: SyntheticScenario) -> ScenarioData:
    """Deterministic scenario realization; raises InfeasibleScenarioError if
    any historical image overlaps the reference by less than 25%."""
    size = spec.image_size
    # world must cover every rotated, shifted, scaled image footprint
    max_shift = max((abs(t.vx) + abs(t.vy) for t in spec.transforms), default=0.0)
    world_size = int(np.ceil(size * np.sqrt(2) * 1.3 + 2 * max_shift)) + 8
    world = road_texture(world_size, spec.texture_seed)
    alt_world = road_texture(world_size, spec.texture_seed + 7919)

    half = size / 2.0
    c = (size - 1) / 2.0
    ref_coords = _world_coords_of_image(size, RigidTransform.identity(), 1.0)
    reference = ImageGrid(np.clip(_sample_world(world, ref_coords), 0, 1))

    # optional planted world change inside one image's footprint: applied
    # after the reference is sampled, so the historical images agree with
    # each other in the changed region but disagree with the reference
    if spec.change_image is not None:
        t = spec.transforms[spec.change_image]
        s = spec.scale_drifts[spec.change_image]
        mask = _footprint_mask(world_size, size, t, s)
        rng = np.random.default_rng(spec.texture_seed + 101)
        blob = value_noise(world_size, rng, octaves=3)
        thr = np.quantile(blob[mask], 1.0 - spec.change_fraction) if mask.any() else 1.0
        change = mask & (blob >= thr)
        world = np.where(change, alt_world, world)

    rng = np.random.default_rng(spec.texture_seed + 31337)
    historical = []
    ground_truth = {}
    for k, (t, s) in enumerate(zip(spec.transforms, spec.scale_drifts)):
        coords = _world_coords_of_image(size, t, s)
        inside = ((np.abs(coords[..., 0]) <= half) & (np.abs(coords[..., 1]) <= half))
        if inside.mean() < 0.25:
            raise InfeasibleScenarioError(
                f"image {k} overlaps the reference by only {inside.mean():.0%}")
        img = _sample_world(world, coords)
        corr = spec.corruption
        alt_img = _sample_world(alt_world, coords)
        img = _occlude(img, corr.occlusion_fraction, rng, alt_img)
        if corr.brightness_delta:
            img = img + corr.brightness_delta
        if corr.noise_sigma:
            img = img + rng.normal(0, corr.noise_sigma, img.shape)
        historical.append(ImageGrid(np.clip(img, 0, 1)))

        # ground-truth correspondences on a grid of historical-image points
        pts = np.linspace(-0.4 * size, 0.4 * size, 6)
        gx, gy = np.meshgrid(pts, pts, indexing="xy")
        q = np.stack([gx.ravel(), gy.ravel()], axis=1)
        p = s * (q @ rotation_matrix(t.gamma).T) + t.translation
        ok = (np.abs(p[:, 0]) <= half) & (np.abs(p[:, 1]) <= half)
        ground_truth[k] = np.stack([q[ok], p[ok]], axis=1)

    return ScenarioData(reference, historical, list(spec.transforms),
                        list(spec.scale_drifts), ground_truth)
