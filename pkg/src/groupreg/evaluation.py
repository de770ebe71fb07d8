"""Registration accuracy metrics and the topology-graph baseline.

Accuracy is measured as RMSE over ground-truth point correspondences mapped
through the estimated transform, plus decomposed rigid-component errors.
The baseline registers images through a dense-matching relation graph with
inverse-inlier-count edge weights and all-pairs shortest paths, without the
groupwise probability optimization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .features import dense_sample, distance_ratio_match
from .geometry import (Homography, RigidTransform, apply_homography,
                       apply_rigid)
from .guided import GuidedMatchConfig, HomographyEstimationError, ransac_homography
from .image import ImageGrid

BASELINE_SUPPORT = 360.0
BASELINE_STEP = 40.0
BASELINE_DISTANCE_RATIO = 1.0 / 1.3


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class GroundTruthCorrespondences:
    """Point pairs (image frame -> reference frame), both in meters."""

    image_points: np.ndarray
    reference_points: np.ndarray

    def __post_init__(self):
        ip = np.atleast_2d(np.asarray(self.image_points, float))
        rp = np.atleast_2d(np.asarray(self.reference_points, float))
        if ip.shape != rp.shape or ip.ndim != 2 or ip.shape[1] != 2:
            raise ValueError("correspondence arrays must both be (M, 2)")
        if len(ip) == 0:
            raise ValueError("at least one correspondence is required")
        ip.setflags(write=False)
        rp.setflags(write=False)
        object.__setattr__(self, "image_points", ip)
        object.__setattr__(self, "reference_points", rp)

    def __len__(self) -> int:
        return len(self.image_points)


def rmse(gt: GroundTruthCorrespondences, transform) -> float:
    """Root-mean-square distance between mapped and true reference points."""
    if isinstance(transform, Homography):
        mapped = apply_homography(transform, gt.image_points)
    else:
        mapped = apply_rigid(transform, gt.image_points)
    d2 = ((mapped - gt.reference_points) ** 2).sum(axis=1)
    return float(np.sqrt(d2.mean()))


def rigid_component_errors(estimated: RigidTransform, true: RigidTransform):
    """(translation error in meters, rotation error in degrees, wrapped to
    [0, 180])."""
    dv = float(np.hypot(estimated.vx - true.vx, estimated.vy - true.vy))
    dg = abs(estimated.gamma - true.gamma) % (2 * np.pi)
    dg = min(dg, 2 * np.pi - dg)
    return dv, float(np.degrees(dg))


def inlier_ratio(points_a: np.ndarray, points_b: np.ndarray, gt_mapping,
                 ground_distance: float) -> float:
    """Fraction of putative matches (a, b) whose b-position lies within
    ground_distance of the true mapping of the a-position."""
    pa = np.atleast_2d(np.asarray(points_a, float))
    pb = np.atleast_2d(np.asarray(points_b, float))
    if len(pa) == 0:
        raise EvaluationError("inlier ratio is undefined for an empty match set")
    if isinstance(gt_mapping, Homography):
        mapped = apply_homography(gt_mapping, pa)
    elif isinstance(gt_mapping, RigidTransform):
        mapped = apply_rigid(gt_mapping, pa)
    else:
        mapped = np.asarray(gt_mapping(pa), float)
    d = np.hypot(*(mapped - pb).T)
    return float((d <= ground_distance).mean())


# ---------------------------------------------------------------------------
# topology-graph baseline
# ---------------------------------------------------------------------------

def _pairwise_baseline_relation(img_a: ImageGrid, img_b: ImageGrid,
                                cfg: GuidedMatchConfig, step, support, tau):
    """(Homography a -> b, inlier count) from dense matching, or None."""
    fa = dense_sample(img_a, step=step, support=support)
    fb = dense_sample(img_b, step=step, support=support)
    if len(fa) == 0 or len(fb) < 2:
        return None
    matches = distance_ratio_match(fa, fb, tau)
    if len(matches) < 4:
        return None
    try:
        h, mask = ransac_homography(matches.positions_a(), matches.positions_b(), cfg)
    except HomographyEstimationError:
        return None
    return h, int(mask.sum())


def topology_baseline(images, reference: ImageGrid,
                      cfg: GuidedMatchConfig | None = None,
                      step: float = BASELINE_STEP,
                      support: float = BASELINE_SUPPORT,
                      tau: float = BASELINE_DISTANCE_RATIO):
    """Register each image via the strongest chain of pairwise relations.

    Builds homographies between all image pairs (including the reference,
    node index N) from dense matching, weights edges by the inverse inlier
    count, and routes every image to the reference over all-pairs shortest
    paths.  Returns (homographies, paths); images with no route get None.
    """
    cfg = cfg or GuidedMatchConfig()
    n = len(images)
    nodes = list(images) + [reference]
    ref = n
    h_edges: dict = {}
    w = np.full((n + 1, n + 1), np.inf)
    for a in range(n + 1):
        for b in range(a + 1, n + 1):
            rel = _pairwise_baseline_relation(nodes[a], nodes[b], cfg,
                                              step, support, tau)
            if rel is None:
                continue
            h_edges[(a, b)] = rel[0]
            w[a, b] = w[b, a] = 1.0 / rel[1]

    dist, pred = shortest_path(w, method="FW", directed=False,
                               return_predecessors=True)
    homographies = []
    paths = []
    for k in range(n):
        if not np.isfinite(dist[k, ref]):
            homographies.append(None)
            paths.append(None)
            continue
        path = [ref]
        while path[-1] != k:
            path.append(int(pred[k, path[-1]]))
        path = list(reversed(path))            # k -> ... -> ref
        total = Homography.identity()
        for u, v in zip(path, path[1:]):
            key = (u, v) if u < v else (v, u)
            h = h_edges[key]
            if (u, v) != key:
                h = h.inverse()
            total = Homography(h.h @ total.h)
        homographies.append(total)
        paths.append(path)
    return homographies, paths


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

_GT_CONVENTION = "# coordinates in meters, image-center origin, x right, y down"
_GT_HEADER = ["image_id", "x_hist", "y_hist", "x_opm", "y_opm"]


def save_ground_truth(path, per_image: dict):
    """CSV of correspondences keyed by image id, with the coordinate
    convention declared in a header comment line."""
    with open(path, "w", newline="") as f:
        f.write(_GT_CONVENTION + "\n")
        wtr = csv.writer(f)
        wtr.writerow(_GT_HEADER)
        for image_id in sorted(per_image):
            gt = per_image[image_id]
            for (ix, iy), (rx, ry) in zip(gt.image_points, gt.reference_points):
                wtr.writerow([image_id, repr(float(ix)), repr(float(iy)),
                              repr(float(rx)), repr(float(ry))])


def load_ground_truth(path) -> dict:
    """Inverse of save_ground_truth: {image_id: GroundTruthCorrespondences}."""
    rows: dict = {}
    with open(path, newline="") as f:
        first = f.readline()
        if not first.startswith("#"):
            raise EvaluationError("missing coordinate-convention header line")
        rdr = csv.reader(f)
        header = next(rdr)
        if header != _GT_HEADER:
            raise EvaluationError(f"unexpected ground-truth header: {header}")
        for row in rdr:
            if not row:
                continue
            rows.setdefault(int(row[0]), []).append([float(v) for v in row[1:]])
    if not rows:
        raise EvaluationError("ground-truth file has no correspondences")
    out = {}
    for image_id, pts in rows.items():
        arr = np.array(pts)
        out[image_id] = GroundTruthCorrespondences(arr[:, :2], arr[:, 2:])
    return out


def save_metrics(path, rows):
    """Rows of (image_id, rmse_m, trans_err_m, rot_err_deg); entries may be
    None when a metric is unavailable for an image."""
    with open(path, "w", newline="") as f:
        wtr = csv.writer(f)
        wtr.writerow(["image_id", "rmse_m", "trans_err_m", "rot_err_deg"])
        for row in rows:
            wtr.writerow(["" if v is None else v for v in row])


def load_metrics(path):
    """Metric rows as (image_id, rmse_m, trans_err_m, rot_err_deg) tuples."""
    out = []
    with open(path, newline="") as f:
        rdr = csv.reader(f)
        header = next(rdr)
        if header != ["image_id", "rmse_m", "trans_err_m", "rot_err_deg"]:
            raise EvaluationError(f"unexpected metrics header: {header}")
        for row in rdr:
            if not row:
                continue
            out.append((int(row[0]),) + tuple(
                None if v == "" else float(v) for v in row[1:]))
    return out
