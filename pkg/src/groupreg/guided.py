"""Geometrically guided matching and homography estimation.

A rigid prior (from the groupwise solver) steers keypoint matching between an
image pair: descriptors are extracted at orientations forced by the prior
rotation, candidate matches are gated by predicted position and by detected
scale ratio, and a homography is robustly fitted to the survivors.  Per-image
homographies to the reference are obtained by concatenation along greedy
graph paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import (FeatureSet, describe_keypoints, detect_dog_keypoints,
                       distance_ratio_match, top_k_matches)
from .geometry import (Homography, RigidTransform, apply_homography,
                       apply_rigid, compose_homography, compose_via_reference,
                       invert_rigid, rigid_to_homography)
from .graphs import RelationGraph, greedy_paths
from .image import ImageGrid


class GuidedMatchError(ValueError):
    """Guided matching could not produce a usable correspondence set."""


class HomographyEstimationError(ValueError):
    """Robust homography fitting failed (too few correspondences/inliers)."""


@dataclass(frozen=True)
class GuidedMatchConfig:
    position_threshold: float = 500.0
    scale_ratio_max: float = 1.4
    distance_ratio: float = 0.7
    ransac_iters: int = 2000
    ransac_inlier_threshold: float = 5.0
    ransac_min_inliers: int = 12
    rng_seed: int = 0

    def __post_init__(self):
        if self.position_threshold <= 0:
            raise ValueError("position_threshold must be positive")
        if self.scale_ratio_max <= 1.0:
            raise ValueError("scale_ratio_max must exceed 1")
        if not 0 < self.distance_ratio < 1:
            raise ValueError("distance_ratio must lie in (0, 1)")


@dataclass
class GuidedMatchResult:
    points_a: np.ndarray        # (M, 2) meters in image a
    points_b: np.ndarray        # (M, 2) meters in image b
    n_candidates: int           # ratio-test survivors before geometric gating
    n_position_rejected: int
    n_scale_rejected: int


def guided_match(img_a: ImageGrid, img_b: ImageGrid, prior: RigidTransform,
                 cfg: GuidedMatchConfig | None = None,
                 keypoints_a: FeatureSet | None = None,
                 keypoints_b: FeatureSet | None = None) -> GuidedMatchResult:
    """Prior-guided correspondences between two images (a -> b).

    Keypoint descriptors are computed at forced orientations: zero in image b
    and the prior rotation in image a, so that correspondent patches are
    described in a common frame regardless of local orientation estimates.
    """
    cfg = cfg or GuidedMatchConfig()
    if keypoints_a is None:
        keypoints_a = detect_dog_keypoints(img_a)
    if keypoints_b is None:
        keypoints_b = detect_dog_keypoints(img_b)
    if len(keypoints_a) == 0 or len(keypoints_b) == 0:
        raise GuidedMatchError("no keypoints detected")

    fa = describe_keypoints(img_a, keypoints_a, forced_theta=prior.gamma)
    fb = describe_keypoints(img_b, keypoints_b, forced_theta=0.0)
    if len(fa) == 0 or len(fb) == 0:
        raise GuidedMatchError("no describable keypoints")
    matches = distance_ratio_match(fa, fb, cfg.distance_ratio)
    n_candidates = len(matches)
    if n_candidates == 0:
        raise GuidedMatchError("no matches survive the distance-ratio test")

    pa = matches.positions_a()
    pb = matches.positions_b()
    predicted = apply_rigid(prior, pa)
    pos_ok = np.hypot(*(pb - predicted).T) <= cfg.position_threshold
    ratio = fa.sigma[matches.ia] / fb.sigma[matches.ib]
    scale_ok = (ratio < cfg.scale_ratio_max) & (ratio > 1.0 / cfg.scale_ratio_max)
    keep = pos_ok & scale_ok
    result = GuidedMatchResult(
        pa[keep], pb[keep], n_candidates,
        int((~pos_ok).sum()), int((pos_ok & ~scale_ok).sum()))
    if keep.sum() == 0:
        raise GuidedMatchError("all matches rejected by the geometric gates")
    return result


# ---------------------------------------------------------------------------
# robust homography fitting
# ---------------------------------------------------------------------------

def _normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity transform mapping points to mean 0, RMS distance sqrt(2)."""
    mean = pts.mean(axis=0)
    rms = np.sqrt(((pts - mean) ** 2).sum(axis=1).mean())
    s = np.sqrt(2.0) / max(rms, 1e-12)
    return np.array([[s, 0.0, -s * mean[0]],
                     [0.0, s, -s * mean[1]],
                     [0.0, 0.0, 1.0]])


def _dlt_homography(pa: np.ndarray, pb: np.ndarray) -> np.ndarray | None:
    """Normalized direct linear transform from >= 4 correspondences."""
    ta = _normalization(pa)
    tb = _normalization(pb)
    a = (pa @ ta[:2, :2].T) + ta[:2, 2]
    b = (pb @ tb[:2, :2].T) + tb[:2, 2]
    n = len(a)
    rows = np.zeros((2 * n, 9))
    rows[0::2, 0:2] = a
    rows[0::2, 2] = 1.0
    rows[0::2, 6:8] = -b[:, [0]] * a
    rows[0::2, 8] = -b[:, 0]
    rows[1::2, 3:5] = a
    rows[1::2, 5] = 1.0
    rows[1::2, 6:8] = -b[:, [1]] * a
    rows[1::2, 8] = -b[:, 1]
    try:
        _, _, vt = np.linalg.svd(rows)
    except np.linalg.LinAlgError:
        return None
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(tb) @ h @ ta
    if abs(h[2, 2]) < 1e-12:
        return None
    return h / h[2, 2]


def _reprojection_errors(h: np.ndarray, pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    q = np.concatenate([pa, np.ones((len(pa), 1))], axis=1) @ h.T
    w = q[:, 2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1.0, w)
    proj = q[:, :2] / w[:, None]
    err = np.hypot(*(proj - pb).T)
    err[bad] = np.inf
    return err


def ransac_homography(points_a: np.ndarray, points_b: np.ndarray,
                      cfg: GuidedMatchConfig | None = None):
    """RANSAC homography a -> b with a final all-inlier DLT refit.

    Returns (Homography, inlier_mask).  Raises HomographyEstimationError when
    fewer than 4 correspondences exist or the best model has fewer than the
    configured minimum inlier count.
    """
    cfg = cfg or GuidedMatchConfig()
    pa = np.asarray(points_a, float)
    pb = np.asarray(points_b, float)
    n = len(pa)
    if n < 4:
        raise HomographyEstimationError(
            f"homography needs >= 4 correspondences, got {n}")
    rng = np.random.default_rng(cfg.rng_seed)

    best_mask = None
    best_count = -1
    max_iters = cfg.ransac_iters
    it = 0
    while it < max_iters:
        it += 1
        idx = rng.choice(n, size=4, replace=False)
        h = _dlt_homography(pa[idx], pb[idx])
        if h is None:
            continue
        mask = _reprojection_errors(h, pa, pb) <= cfg.ransac_inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            # adaptive iteration bound at 99.9% sample confidence
            w = count / n
            if w > 0:
                denom = -np.log1p(-min(w ** 4, 1 - 1e-12))
                max_iters = min(cfg.ransac_iters,
                                int(np.ceil(-np.log(1e-3) / denom)) if denom > 0
                                else cfg.ransac_iters)

    if best_mask is None or best_count < cfg.ransac_min_inliers:
        raise HomographyEstimationError(
            f"only {max(best_count, 0)} inliers, "
            f"need {cfg.ransac_min_inliers}")
    h = _dlt_homography(pa[best_mask], pb[best_mask])
    if h is None:
        raise HomographyEstimationError("degenerate inlier refit")
    refined = _reprojection_errors(h, pa, pb) <= cfg.ransac_inlier_threshold
    if refined.sum() >= cfg.ransac_min_inliers:
        best_mask = refined
        h2 = _dlt_homography(pa[refined], pb[refined])
        if h2 is not None:
            h = h2
    return Homography(h), best_mask


# ---------------------------------------------------------------------------
# group registration to homographies
# ---------------------------------------------------------------------------

def find_paths_to_reference(graph: RelationGraph, reference):
    """Greedy ascending-weight path search: {node: (path, confidence)}."""
    return greedy_paths(graph, reference)


@dataclass
class RegistrationResult:
    homographies: list            # per historical image, to the reference
    rigid_fallback: list          # per image: True if any path edge fell back
    paths: list                   # per image: node path, -1 = reference node
    inlier_counts: dict           # edge (u, v) canonical -> inlier count


def _edge_homography(images, reference, u, v, prior, cfg):
    """Homography u -> v (node -1 is the reference); rigid fallback on failure."""
    img_u = reference if u == -1 else images[u]
    img_v = reference if v == -1 else images[v]
    try:
        res = guided_match(img_u, img_v, prior, cfg)
        h, mask = ransac_homography(res.points_a, res.points_b, cfg)
        return h, int(mask.sum()), False
    except (GuidedMatchError, HomographyEstimationError):
        return rigid_to_homography(prior), 0, True


def register_to_reference(images, reference: ImageGrid, solution_transforms,
                          pair_likelihoods: dict,
                          cfg: GuidedMatchConfig | None = None) -> RegistrationResult:
    """Refine a rigid group solution into per-image homographies.

    pair_likelihoods maps edges to likelihood scores; node -1 denotes the
    reference image and (k, -1) scores the direct relation of image k.  Edge
    weights are the inverse likelihoods; each image follows its greedy path
    to the reference, concatenating per-edge homographies.
    """
    cfg = cfg or GuidedMatchConfig()
    n = len(images)
    graph = RelationGraph(nodes=list(range(n)) + [-1])
    for (u, v), lik in pair_likelihoods.items():
        if lik > 0:
            graph.add_edge(u, v, 1.0 / lik)
    paths = greedy_paths(graph, reference=-1)

    def prior(u, v):
        tu = RigidTransform.identity() if u == -1 else solution_transforms[u]
        tv = RigidTransform.identity() if v == -1 else solution_transforms[v]
        # maps u-frame coordinates into v-frame coordinates
        return compose_via_reference(tu, tv) if v != -1 else tu

    edge_h: dict = {}
    inlier_counts: dict = {}
    fallback_edges: set = set()
    homographies = []
    rigid_fallback = []
    out_paths = []
    for k in range(n):
        path = paths[k][0]
        out_paths.append(path)
        total = None
        fell_back = False
        for u, v in zip(path, path[1:]):
            key = RelationGraph.canonical(u, v)
            if key not in edge_h:
                h, count, fb = _edge_homography(
                    images, reference, key[0], key[1],
                    prior(key[0], key[1]), cfg)
                edge_h[key] = h
                inlier_counts[key] = count
                if fb:
                    fallback_edges.add(key)
            h = edge_h[key]
            if (u, v) != key:
                h = h.inverse()
            total = h if total is None else compose_homography(h, total)
            fell_back = fell_back or key in fallback_edges
        homographies.append(total)
        rigid_fallback.append(fell_back)
    return RegistrationResult(homographies, rigid_fallback, out_paths,
                              inlier_counts)
