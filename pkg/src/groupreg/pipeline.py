"""End-to-end registration pipeline with stage caching and reporting.

Stages: feature extraction -> pairwise voting spaces (both cached on disk,
keyed by content and parameters) -> groupwise rigid optimization -> guided
homography refinement -> evaluation.  Artifacts: rigid transforms text,
per-image homography files, metrics CSV, a timing report, and an optional
checkerboard mosaic for visual inspection.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field

import cv2
import numpy as np

from . import cache as cachemod
from .config import PipelineConfig
from .evaluation import load_ground_truth, rmse, save_metrics
from .features import FeatureSet, dense_sample, top_k_matches
from .geometry import compose_via_reference
from .groupwise import (ImageGroup, RelationMask, SolverConfig,
                        solve_sequential)
from .guided import GuidedMatchConfig, register_to_reference
from .hough import EmptyHoughSpaceError, Extent, build_hough_space
from .image import ImageGrid, load_image
from .optim import PsoConfig

CACHE_ENV_VAR = "GROUPREG_CACHE_DIR"


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


@dataclass
class PipelineInputs:
    reference_path: str
    historical_paths: list
    ground_truth_path: str | None = None
    output_dir: str = "."
    cache_dir: str | None = None        # default: env var, else output_dir/cache
    write_mosaic: bool = False


@dataclass
class PipelineResult:
    transforms: list
    homographies: list
    rigid_fallback: list
    metrics: list
    fitness: float
    timings: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)


def _solver_config(cfg: PipelineConfig) -> SolverConfig:
    return SolverConfig(
        pso=PsoConfig(particle_count=cfg.pso_particles,
                      max_iters=cfg.pso_max_iters, inertia=cfg.pso_inertia,
                      cognitive=cfg.pso_cognitive, social=cfg.pso_social,
                      stall_iters=cfg.pso_stall_iters, rng_seed=cfg.rng_seed),
        random_confidence_fraction=cfg.random_confidence_fraction,
        translation_noise_sigma=cfg.translation_noise_sigma_m,
        reference_particles=cfg.reference_particles,
        refine_step_m=cfg.refine_step_m,
        refine_step_deg=cfg.refine_step_deg,
    )


def _guided_config(cfg: PipelineConfig) -> GuidedMatchConfig:
    return GuidedMatchConfig(
        position_threshold=cfg.guided_position_threshold_m,
        scale_ratio_max=cfg.guided_scale_ratio_max,
        distance_ratio=cfg.guided_distance_ratio,
        ransac_iters=cfg.ransac_iters,
        ransac_inlier_threshold=cfg.ransac_inlier_threshold_m,
        ransac_min_inliers=cfg.ransac_min_inliers,
        rng_seed=cfg.rng_seed,
    )


def resolve_cache_dir(inputs: PipelineInputs) -> str:
    if inputs.cache_dir is not None:
        return inputs.cache_dir
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return env
    return os.path.join(inputs.output_dir, "cache")


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def _params_digest(*vals) -> str:
    return hashlib.sha256(repr(vals).encode()).hexdigest()[:16]


def extract_features_cached(img_path: str, cfg: PipelineConfig,
                            cache_dir: str) -> FeatureSet:
    os.makedirs(cache_dir, exist_ok=True)
    key = _file_digest(img_path) + "-" + _params_digest(
        "feat", cfg.feature_step_m, cfg.feature_support_m)
    blob = os.path.join(cache_dir, f"feat-{key}.bin")
    if os.path.exists(blob):
        try:
            return cachemod.load_features(blob)
        except cachemod.CacheFormatError:
            pass
    feats = dense_sample(load_image(img_path), step=cfg.feature_step_m,
                         support=cfg.feature_support_m)
    cachemod.save_features(blob, feats)
    return feats


def build_space_cached(feats_a: FeatureSet, feats_b: FeatureSet, tag: str,
                       cfg: PipelineConfig, cache_dir: str):
    os.makedirs(cache_dir, exist_ok=True)
    key = _params_digest("hough", tag, cfg.top_k_matches, cfg.zoning_cell_m,
                         cfg.rot_bins, cfg.trans_bin_m, cfg.smooth_sigma_m,
                         cfg.extent_m, cfg.feature_step_m, cfg.feature_support_m)
    blob = os.path.join(cache_dir, f"hough-{key}.bin")
    if os.path.exists(blob):
        try:
            return cachemod.load_hough_space(blob)
        except cachemod.CacheFormatError:
            pass
    matches = top_k_matches(feats_a, feats_b, cfg.top_k_matches)
    space = build_hough_space(matches, Extent.symmetric(cfg.extent_m),
                              zoning_cell=cfg.zoning_cell_m,
                              trans_bin=cfg.trans_bin_m, rot_bins=cfg.rot_bins,
                              smooth_sigma=cfg.smooth_sigma_m)
    cachemod.save_hough_space(blob, space)
    return space


def build_group(feats: list, cfg: PipelineConfig, cache_dir: str,
                tags: list) -> tuple:
    """(ImageGroup, RelationMask) from reference + historical feature sets.

    Pairs whose voting space is empty (no vote inside the extent) are masked
    out rather than failing the run.
    """
    n = len(feats) - 1
    direct = []
    for k in range(n):
        direct.append(build_space_cached(feats[1 + k], feats[0],
                                         f"{tags[1 + k]}>{tags[0]}", cfg,
                                         cache_dir))
    mask = RelationMask.all_ones(n)
    pairwise = {}
    for k in range(n):
        for l in range(k + 1, n):
            try:
                pairwise[(k, l)] = build_space_cached(
                    feats[1 + k], feats[1 + l],
                    f"{tags[1 + k]}>{tags[1 + l]}", cfg, cache_dir)
            except EmptyHoughSpaceError:
                mask.w[k, l] = mask.w[l, k] = False
    return ImageGroup(direct, pairwise), mask


def _mosaic(reference: ImageGrid, historical, homographies,
            cell_px: int = 32) -> np.ndarray:
    """Checkerboard composite: alternate cells show the reference and the
    historical images warped into its frame."""
    h, w = reference.pixels.shape
    c = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    warped = np.zeros((h, w))
    filled = np.zeros((h, w), bool)
    for img, hom in zip(historical, homographies):
        if hom is None:
            continue
        ci = np.array([(img.width - 1) / 2.0, (img.height - 1) / 2.0])
        # pixel-frame homography: shift to center, map meters, shift back
        a = np.eye(3)
        a[:2, 2] = c
        b = np.eye(3)
        b[:2, 2] = -ci
        mpp = np.diag([img.meters_per_px, img.meters_per_px, 1.0])
        inv_mpp = np.diag([1.0 / reference.meters_per_px,
                           1.0 / reference.meters_per_px, 1.0])
        hpx = a @ inv_mpp @ hom.h @ mpp @ b
        out = cv2.warpPerspective(img.pixels, hpx, (w, h),
                                  flags=cv2.INTER_LINEAR,
                                  borderValue=-1.0)
        ok = (out >= 0) & ~filled
        warped[ok] = out[ok]
        filled |= ok
    ys, xs = np.mgrid[0:h, 0:w]
    checker = ((ys // cell_px) + (xs // cell_px)) % 2 == 0
    mosaic = np.where(checker | ~filled, reference.pixels, warped)
    return (np.clip(mosaic, 0, 1) * 255).astype(np.uint8)


def run_pipeline(cfg: PipelineConfig, inputs: PipelineInputs) -> PipelineResult:
    os.makedirs(inputs.output_dir, exist_ok=True)
    cache_dir = resolve_cache_dir(inputs)
    timings = []
    artifacts = {}

    def timed(stage, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as e:
            raise PipelineError(stage, e) from e
        timings.append((stage, time.perf_counter() - t0))
        return out

    paths = [inputs.reference_path] + list(inputs.historical_paths)

    def run_features():
        return ([_file_digest(p) for p in paths],
                [extract_features_cached(p, cfg, cache_dir) for p in paths])
    tags, feats = timed("features", run_features)
    group, mask = timed("hough", lambda: build_group(feats, cfg, cache_dir, tags))
    solution = timed("groupwise",
                     lambda: solve_sequential(group, mask, _solver_config(cfg)))

    reference = load_image(inputs.reference_path)
    historical = [load_image(p) for p in inputs.historical_paths]
    n = len(historical)

    def run_guided():
        likelihoods = {(k, -1): group.direct[k].lookup(solution.transforms[k])
                       for k in range(n)}
        for k, l in mask.pairs():
            comp = compose_via_reference(solution.transforms[k],
                                         solution.transforms[l])
            likelihoods[(k, l)] = group.space(k, l).lookup(comp)
        return register_to_reference(historical, reference,
                                     solution.transforms, likelihoods,
                                     _guided_config(cfg))
    guided = timed("guided", run_guided)

    metrics = []
    if inputs.ground_truth_path is not None:
        def run_eval():
            gt = load_ground_truth(inputs.ground_truth_path)
            rows = []
            for k in range(n):
                if k not in gt:
                    rows.append((k, None, None, None))
                    continue
                # without true transforms only the RMSE column is meaningful
                rows.append((k, rmse(gt[k], guided.homographies[k]), None, None))
            return rows
        metrics = timed("eval", run_eval)

    def write_outputs():
        tpath = os.path.join(inputs.output_dir, "transforms.txt")
        cachemod.save_transforms(tpath, solution.transforms)
        artifacts["transforms"] = tpath
        for k, hom in enumerate(guided.homographies):
            hp = os.path.join(inputs.output_dir, f"homography_{k:02d}.txt")
            cachemod.save_homography(hp, hom)
            artifacts[f"homography_{k}"] = hp
        if metrics:
            mpath = os.path.join(inputs.output_dir, "metrics.csv")
            save_metrics(mpath, metrics)
            artifacts["metrics"] = mpath
        rpath = os.path.join(inputs.output_dir, "timings.txt")
        with open(rpath, "w") as f:
            for stage, dt in timings:
                f.write(f"{stage} {dt:.3f}\n")
        artifacts["timings"] = rpath
        if inputs.write_mosaic:
            mos = _mosaic(reference, historical, guided.homographies)
            mpath = os.path.join(inputs.output_dir, "mosaic.png")
            cv2.imwrite(mpath, mos)
            artifacts["mosaic"] = mpath
    timed("write", write_outputs)

    return PipelineResult(solution.transforms, guided.homographies,
                          guided.rigid_fallback, metrics, solution.fitness,
                          timings, artifacts)


@dataclass
class StabilityReport:
    seeds: list
    transforms: list                 # per seed: list of RigidTransform
    mean: np.ndarray                 # (N, 3) vx, vy, gamma (circular mean)
    std_translation: np.ndarray      # (N,) meters
    std_rotation_deg: np.ndarray     # (N,)


def stability_report(group: ImageGroup, mask: RelationMask,
                     cfg: PipelineConfig, runs: int | None = None) -> StabilityReport:
    """Re-solve the same problem under varied solver seeds; report the spread
    of the recovered transforms."""
    runs = runs or cfg.runs
    base = _solver_config(cfg)
    seeds = [cfg.rng_seed + i for i in range(runs)]
    all_t = []
    for seed in seeds:
        sc = SolverConfig(
            pso=PsoConfig(particle_count=base.pso.particle_count,
                          max_iters=base.pso.max_iters,
                          inertia=base.pso.inertia,
                          cognitive=base.pso.cognitive, social=base.pso.social,
                          stall_iters=base.pso.stall_iters, rng_seed=seed),
            random_confidence_fraction=base.random_confidence_fraction,
            translation_noise_sigma=base.translation_noise_sigma,
            reference_particles=base.reference_particles,
            refine_step_m=base.refine_step_m,
            refine_step_deg=base.refine_step_deg)
        all_t.append(solve_sequential(group, mask, sc).transforms)

    n = len(all_t[0])
    vx = np.array([[t[k].vx for k in range(n)] for t in all_t])
    vy = np.array([[t[k].vy for k in range(n)] for t in all_t])
    g = np.array([[t[k].gamma for k in range(n)] for t in all_t])
    mean_g = np.arctan2(np.sin(g).mean(0), np.cos(g).mean(0)) % (2 * np.pi)
    dev = (g - mean_g + np.pi) % (2 * np.pi) - np.pi
    mean = np.stack([vx.mean(0), vy.mean(0), mean_g], axis=1)
    std_t = np.sqrt(vx.var(0) + vy.var(0))
    std_r = np.degrees(np.sqrt((dev ** 2).mean(0)))
    return StabilityReport(seeds, all_t, mean, std_t, std_r)
