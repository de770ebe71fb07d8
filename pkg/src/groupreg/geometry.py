"""Rigid 2-D transforms and homographies.

Conventions: image-center origin, x rightward, y downward, 1 px = 1 m after
scale normalization.  A rigid transform maps points as p' = R(gamma) p + v
with R(gamma) = [[cos, -sin], [sin, cos]].  Angles are radians, stored
normalized to [0, 2*pi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


class DegenerateHomographyError(ValueError):
    """Raised when a homography (or a product of them) is numerically singular."""


def normalize_angle(gamma: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    g = float(gamma) % TWO_PI
    # Guard against the half-open interval collapsing due to rounding.
    if g >= TWO_PI:
        g = 0.0
    return g


def rotation_matrix(gamma: float) -> np.ndarray:
    c, s = np.cos(gamma), np.sin(gamma)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class RigidTransform:
    """Translation (vx, vy) in meters plus rotation angle gamma in radians."""

    vx: float
    vy: float
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "vx", float(self.vx))
        object.__setattr__(self, "vy", float(self.vy))
        object.__setattr__(self, "gamma", normalize_angle(self.gamma))

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.vx, self.vy])

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(0.0, 0.0, 0.0)


def apply_rigid(t: RigidTransform, p) -> np.ndarray:
    """Apply R(gamma) p + v to one point or an (..., 2) array of points."""
    p = np.asarray(p, dtype=float)
    return p @ rotation_matrix(t.gamma).T + t.translation


def invert_rigid(t: RigidTransform) -> RigidTransform:
    """Inverse transform: p = R(-gamma) (p' - v)."""
    v = -(rotation_matrix(-t.gamma) @ t.translation)
    return RigidTransform(v[0], v[1], -t.gamma)


def compose_rigid(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition a after b: (a o b)(p) = a(b(p))."""
    v = rotation_matrix(a.gamma) @ b.translation + a.translation
    return RigidTransform(v[0], v[1], a.gamma + b.gamma)


def compose_via_reference(tk: RigidTransform, tl: RigidTransform) -> RigidTransform:
    """Transform mapping image k to image l when tk, tl both map into a common
    reference frame, i.e. inverse(tl) composed after tk.  Its rotation is
    gamma_k - gamma_l (mod 2*pi)."""
    return compose_rigid(invert_rigid(tl), tk)


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform, normalized so h[2, 2] = 1 when nonzero."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {h.shape}")
        if abs(h[2, 2]) > 1e-300:
            h = h / h[2, 2]
        if abs(np.linalg.det(h)) <= 1e-12:
            raise DegenerateHomographyError("homography matrix is numerically singular")
        h = h.copy()
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))


def apply_homography(h: Homography, p) -> np.ndarray:
    """Map one point or an (..., 2) array of points through the homography."""
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1) @ h.h.T
    out = hom[:, :2] / hom[:, 2:3]
    return out[0] if single else out.reshape(p.shape)


def compose_homography(a: Homography, b: Homography) -> Homography:
    """Composition a after b; raises DegenerateHomographyError on a singular chain."""
    return Homography(a.h @ b.h)


def rigid_to_homography(t: RigidTransform) -> Homography:
    h = np.eye(3)
    h[:2, :2] = rotation_matrix(t.gamma)
    h[:2, 2] = t.translation
    return Homography(h)
