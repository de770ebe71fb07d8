"""On-disk serialization of features, Hough spaces, transforms, homographies.

Binary blobs carry a magic tag and a format version so stale caches are
rejected rather than misread.  Transforms and homographies use plain text
with full float precision (repr round-trip).
"""

from __future__ import annotations

import struct

import numpy as np

from .geometry import Homography, RigidTransform
from .features import DESCRIPTOR_SIZE, FeatureSet
from .hough import Extent, HoughSpace

FEATURE_MAGIC = b"GRFT"
HOUGH_MAGIC = b"GRHS"
FORMAT_VERSION = 1


class CacheFormatError(ValueError):
    """The file is not a cache blob of the expected kind and version."""


def _check_header(f, magic):
    got = f.read(4)
    if got != magic:
        raise CacheFormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", f.read(4))
    if version != FORMAT_VERSION:
        raise CacheFormatError(f"unsupported format version {version}")


def _read_array(f, count, dtype):
    itemsize = np.dtype(dtype).itemsize
    buf = f.read(itemsize * count)
    if len(buf) != itemsize * count:
        raise CacheFormatError("truncated cache blob")
    return np.frombuffer(buf, dtype=dtype).copy()


def save_features(path, feats: FeatureSet):
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(feats)))
        for arr, dt in ((feats.x, "<f8"), (feats.y, "<f8"),
                        (feats.sigma, "<f8"), (feats.theta, "<f8"),
                        (feats.descriptors, "<f4")):
            f.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def load_features(path) -> FeatureSet:
    with open(path, "rb") as f:
        _check_header(f, FEATURE_MAGIC)
        (n,) = struct.unpack("<I", f.read(4))
        x = _read_array(f, n, "<f8")
        y = _read_array(f, n, "<f8")
        sigma = _read_array(f, n, "<f8")
        theta = _read_array(f, n, "<f8")
        desc = _read_array(f, n * DESCRIPTOR_SIZE, "<f4")
        return FeatureSet(x, y, sigma, theta,
                          desc.reshape(n, DESCRIPTOR_SIZE))


def save_hough_space(path, h: HoughSpace):
    with open(path, "wb") as f:
        f.write(HOUGH_MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(h.mass)))
        f.write(struct.pack("<4d", h.extent.vx_min, h.extent.vx_max,
                            h.extent.vy_min, h.extent.vy_max))
        f.write(struct.pack("<ddI", h.trans_bin, h.smooth_sigma, h.rot_bins))
        for arr, dt in ((h.ix, "<i8"), (h.iy, "<i8"), (h.ig, "<i8"),
                        (h.mass, "<f8")):
            f.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def load_hough_space(path) -> HoughSpace:
    with open(path, "rb") as f:
        _check_header(f, HOUGH_MAGIC)
        (n,) = struct.unpack("<I", f.read(4))
        extent = Extent(*struct.unpack("<4d", f.read(32)))
        trans_bin, smooth_sigma, rot_bins = struct.unpack("<ddI", f.read(20))
        ix = _read_array(f, n, "<i8")
        iy = _read_array(f, n, "<i8")
        ig = _read_array(f, n, "<i8")
        mass = _read_array(f, n, "<f8")
        h = HoughSpace(ix, iy, ig, mass, extent, trans_bin, rot_bins,
                       smooth_sigma)
        # restore the exact stored masses: the constructor renormalizes, and
        # the extra division may perturb the last ulp on an already-normalized
        # vector, breaking bit-identical cached reruns
        h.mass = mass
        return h


# ---------------------------------------------------------------------------
# text formats
# ---------------------------------------------------------------------------

def save_transforms(path, transforms):
    """One line per transform: vx_m vy_m gamma_deg."""
    with open(path, "w") as f:
        f.write("# vx_m vy_m gamma_deg\n")
        for t in transforms:
            f.write(f"{float(t.vx)!r} {float(t.vy)!r} "
                    f"{float(np.degrees(t.gamma))!r}\n")


def load_transforms(path):
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vx, vy, gdeg = (float(v) for v in line.split())
            out.append(RigidTransform(vx, vy, np.radians(gdeg)))
    return out


def save_homography(path, h: Homography):
    """Nine row-major matrix entries on one line."""
    with open(path, "w") as f:
        f.write(" ".join(repr(float(v)) for v in h.h.ravel()) + "\n")


def load_homography(path) -> Homography:
    with open(path) as f:
        vals = [float(v) for v in f.read().split()]
    if len(vals) != 9:
        raise CacheFormatError(f"expected 9 homography entries, got {len(vals)}")
    return Homography(np.array(vals).reshape(3, 3))
