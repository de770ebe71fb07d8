"""Groupwise registration of aerial images to a reference map.

Pairwise rigid-transform probabilities are estimated with sparse 3-D Hough
voting spaces built from dense local-feature matches; a group of images is
registered jointly by maximizing the summed probability of all direct and
indirect relations, then refined to per-image homographies with
geometrically guided matching.
"""

__version__ = "0.1.0"

from .geometry import (Homography, RigidTransform, apply_homography,
                       apply_rigid, compose_rigid, compose_via_reference,
                       invert_rigid, rigid_to_homography)
from .image import ImageGrid, load_image, save_image

__all__ = [
    "Homography", "RigidTransform", "apply_homography", "apply_rigid",
    "compose_rigid", "compose_via_reference", "invert_rigid",
    "rigid_to_homography", "ImageGrid", "load_image", "save_image",
    "__version__",
]
