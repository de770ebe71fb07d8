"""Groupwise max-likelihood registration over pairwise Hough estimators.

The fitness of a transform set sums direct (historical -> reference) and
indirect (historical -> historical, via composed transforms) probabilities.
It is maximized sequentially: rotations among historical images, then their
translations, then the three reference-frame parameters, then a joint
quasi-Newton refinement of all 3N parameters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (RigidTransform, TWO_PI, compose_rigid,
                       compose_via_reference, invert_rigid, rotation_matrix)
from .graphs import RelationGraph, greedy_paths
from .hough import (HoughSpace, RotationEstimator, TranslationEstimator,
                    UninformativeEstimatorError, rotation_estimator,
                    translation_estimator)
from .optim import PsoConfig, pso_minimize, refine_maximize


class MissingSpaceError(KeyError):
    """A Hough space required by the relation mask is absent."""


@dataclass
class RelationMask:
    """Symmetric binary indicator over historical image pairs."""

    n: int
    w: np.ndarray = None

    def __post_init__(self):
        if self.w is None:
            self.w = np.ones((self.n, self.n), bool)
        self.w = np.asarray(self.w, bool)
        np.fill_diagonal(self.w, False)
        if not np.array_equal(self.w, self.w.T):
            raise ValueError("relation mask must be symmetric")

    @classmethod
    def all_ones(cls, n: int) -> "RelationMask":
        return cls(n)

    @classmethod
    def all_zeros(cls, n: int) -> "RelationMask":
        return cls(n, np.zeros((n, n), bool))

    def pairs(self):
        """Masked-in unordered pairs (k, l) with k < l."""
        return [(k, l) for k in range(self.n) for l in range(k + 1, self.n)
                if self.w[k, l]]


class ImageGroup:
    """Hough estimators of one registration problem.

    direct[k] estimates the transform of historical image k to the reference;
    pairwise[(k, l)] (k < l) estimates the transform of image k to image l.
    """

    def __init__(self, direct: list, pairwise: dict):
        self.direct = list(direct)
        self.pairwise = dict(pairwise)
        self.n = len(self.direct)
        self._rot_est: dict = {}
        self._trans_est: dict = {}

    def space(self, k: int, l: int) -> HoughSpace:
        key = (k, l) if k < l else (l, k)
        if key not in self.pairwise:
            raise MissingSpaceError(f"no Hough space for image pair {key}")
        return self.pairwise[key]

    def rotation_est(self, k: int, l: int) -> RotationEstimator:
        key = (k, l) if k < l else (l, k)
        if key not in self._rot_est:
            self._rot_est[key] = rotation_estimator(self.space(k, l))
        return self._rot_est[key]

    def translation_est(self, k: int, l: int, gamma: float) -> TranslationEstimator:
        key = ((k, l) if k < l else (l, k), round(float(gamma) % TWO_PI, 12))
        if key not in self._trans_est:
            self._trans_est[key] = translation_estimator(self.space(k, l),
                                                         key[1])
        return self._trans_est[key]


@dataclass
class GroupSolution:
    transforms: list
    fitness: float
    stage_trace: list = field(default_factory=list)  # (stage, fitness, seconds)


@dataclass(frozen=True)
class SolverConfig:
    """Sequential-optimization parameters beyond the raw PSO coefficients."""

    pso: PsoConfig = field(default_factory=PsoConfig)
    random_confidence_fraction: float = 0.3
    translation_noise_sigma: float = 3.0
    reference_particles: int = 5
    reference_pad_sigma_m: float = 10.0
    reference_pad_sigma_deg: float = 2.0
    refine_step_m: float = 0.5
    refine_step_deg: float = 0.5


# ---------------------------------------------------------------------------
# fitness functions
# ---------------------------------------------------------------------------

def fitness_full(group: ImageGroup, mask: RelationMask, transforms) -> float:
    """Eq.-style groupwise fitness: direct plus masked indirect relations."""
    if len(transforms) != group.n:
        raise ValueError("one transform per historical image required")
    val = sum(group.direct[k].lookup(t) for k, t in enumerate(transforms))
    for k, l in mask.pairs():
        comp = compose_via_reference(transforms[k], transforms[l])
        val += group.space(k, l).lookup(comp)
    return float(val)


def fitness_rotation(group: ImageGroup, mask: RelationMask, rotations) -> float:
    """Rotation-stage fitness; rotations are the N-1 angles of images 1..N-1
    relative to historical image 0 (the in-group reference)."""
    r = np.concatenate([[0.0], np.asarray(rotations, float)])
    if len(r) != group.n:
        raise ValueError("expected N-1 rotations")
    val = 0.0
    for k, l in mask.pairs():
        val += group.rotation_est(k, l).value(r[k] - r[l])
    return float(val)


def fitness_translation(group: ImageGroup, mask: RelationMask,
                        fixed_rotations, translations) -> float:
    """Translation-stage fitness at rotations fixed from the previous stage;
    translations are the N-1 vectors of images 1..N-1 relative to image 0."""
    r = np.concatenate([[0.0], np.asarray(fixed_rotations, float)])
    v = np.vstack([[0.0, 0.0], np.asarray(translations, float).reshape(-1, 2)])
    if len(v) != group.n:
        raise ValueError("expected N-1 translation vectors")
    val = 0.0
    for k, l in mask.pairs():
        try:
            te = group.translation_est(k, l, r[k] - r[l])
        except UninformativeEstimatorError:
            # the fixed rotation selects an empty slice: the pair simply
            # contributes no probability mass at this configuration
            continue
        rel = rotation_matrix(-r[l]) @ (v[k] - v[l])
        val += te.value(rel[0], rel[1])
    return float(val)


# ---------------------------------------------------------------------------
# greedy initialization
# ---------------------------------------------------------------------------

def greedy_init(graph: RelationGraph, reference=0):
    """Greedy graph initialization: {node: (path_to_reference, confidence)}."""
    return greedy_paths(graph, reference)


def _edge_rigid(group: ImageGroup, rotations, u: int, v: int) -> RigidTransform:
    """Point-estimate rigid transform u -> v from the pairwise estimators,
    with the rotation component fixed to rotations[u] - rotations[v]."""
    k, l = (u, v) if u < v else (v, u)
    gamma = rotations[k] - rotations[l]
    te = group.translation_est(k, l, gamma)
    vx, vy, _ = te.argmax()
    t = RigidTransform(vx, vy, gamma)
    return t if (u, v) == (k, l) else invert_rigid(t)


def _compose_along_path(group: ImageGroup, rotations, path) -> RigidTransform:
    """Concatenated rigid relation along a node path (first -> last)."""
    acc = RigidTransform.identity()
    for u, v in zip(path, path[1:]):
        acc = compose_rigid(_edge_rigid(group, rotations, u, v), acc)
    return acc


def _rotation_graph(group: ImageGroup, mask: RelationMask) -> RelationGraph:
    g = RelationGraph(nodes=list(range(group.n)))
    for k, l in mask.pairs():
        p = group.rotation_est(k, l).max_prob()
        if p > 0:
            g.add_edge(k, l, 1.0 / p)
    return g


def _translation_graph(group: ImageGroup, mask: RelationMask,
                       rotations) -> RelationGraph:
    g = RelationGraph(nodes=list(range(group.n)))
    for k, l in mask.pairs():
        try:
            te = group.translation_est(k, l, rotations[k] - rotations[l])
        except UninformativeEstimatorError:
            continue        # empty slice at these rotations: no usable edge
        _, _, val = te.argmax()
        if val > 0:
            g.add_edge(k, l, 1.0 / val)
    return g


def _path_rotation(group: ImageGroup, path) -> float:
    """Concatenated argmax rotation along a node path (first -> last)."""
    total = 0.0
    for u, v in zip(path, path[1:]):
        k, l = (u, v) if u < v else (v, u)
        gamma = group.rotation_est(k, l).argmax_gamma()
        total += gamma if (u, v) == (k, l) else -gamma
    return total % TWO_PI


# ---------------------------------------------------------------------------
# batched stage objectives
# ---------------------------------------------------------------------------

def _rotation_objective(group, mask):
    pairs = mask.pairs()
    ests = {p: group.rotation_est(*p) for p in pairs}

    def obj(x):
        # x: (P, N-1) rotations of images 1..N-1
        r = np.concatenate([np.zeros((len(x), 1)), x], axis=1)
        val = np.zeros(len(x))
        for (k, l), est in ests.items():
            val += est.value_many(r[:, k] - r[:, l])
        return -val
    return obj


def _te_values_batch(te: TranslationEstimator, pts: np.ndarray) -> np.ndarray:
    """Fast batched estimator reads for PSO: nearest-cell reads of the dense
    smoothed grid when available, exact kernel sums otherwise."""
    dense = te.dense()
    if dense is None:
        return te.value_many(pts)
    grid, ix_lo, iy_lo = dense
    ix = np.rint(pts[:, 0] / te.trans_bin).astype(int) - ix_lo
    iy = np.rint(pts[:, 1] / te.trans_bin).astype(int) - iy_lo
    ok = (ix >= 0) & (ix < grid.shape[0]) & (iy >= 0) & (iy < grid.shape[1])
    out = np.zeros(len(pts))
    out[ok] = grid[ix[ok], iy[ok]]
    return out


def _translation_objective(group, mask, rotations):
    r = np.concatenate([[0.0], np.asarray(rotations, float)])
    ests = {}
    for k, l in mask.pairs():
        try:
            ests[(k, l)] = group.translation_est(k, l, r[k] - r[l])
        except UninformativeEstimatorError:
            continue        # empty slice at these rotations: zero contribution
    rots = {p: rotation_matrix(-r[p[1]]) for p in ests}

    def obj(x):
        # x: (P, 2(N-1)) translations of images 1..N-1
        v = np.concatenate([np.zeros((len(x), 1, 2)), x.reshape(len(x), -1, 2)],
                           axis=1)
        val = np.zeros(len(x))
        for (k, l), est in ests.items():
            rel = (v[:, k] - v[:, l]) @ rots[(k, l)].T
            val += _te_values_batch(est, rel)
        return -val
    return obj


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def _transforms_from_params(x: np.ndarray) -> list:
    return [RigidTransform(*x[3 * k:3 * k + 3]) for k in range(len(x) // 3)]


def _direct_bounds(group: ImageGroup):
    exts = [s.extent for s in group.direct]
    return (min(e.vx_min for e in exts), max(e.vx_max for e in exts),
            min(e.vy_min for e in exts), max(e.vy_max for e in exts))


def solve_sequential(group: ImageGroup, mask: RelationMask,
                     cfg: SolverConfig | None = None) -> GroupSolution:
    """Three-stage sequential optimization plus joint refinement."""
    cfg = cfg or SolverConfig()
    n = group.n
    trace = []
    rng = np.random.default_rng(cfg.pso.rng_seed)

    if n == 1:
        rotations = np.zeros(0)
        translations = np.zeros((0, 2))
        t0 = time.perf_counter()
        trace.append(("rotations", 0.0, time.perf_counter() - t0))
        trace.append(("translations", 0.0, time.perf_counter() - t0))
    else:
        # stage 1: rotations among historical images
        t0 = time.perf_counter()
        rg = _rotation_graph(group, mask)
        init = greedy_init(rg, reference=0)
        init_rot = np.array([_path_rotation(group, init[k][0]) for k in range(1, n)])
        conf = np.array([init[k][1] for k in range(1, n)])
        ndim = n - 1
        n_random = min(ndim, int(np.ceil(cfg.random_confidence_fraction * ndim)))
        low_conf = np.argsort(conf, kind="stable")[:n_random]
        particles = np.tile(init_rot, (cfg.pso.particle_count, 1))
        particles[:, low_conf] = rng.uniform(0, TWO_PI,
                                             (cfg.pso.particle_count, n_random))
        obj = _rotation_objective(group, mask)
        best, best_f = pso_minimize(
            obj, (np.zeros(ndim), np.full(ndim, TWO_PI)), particles, cfg.pso,
            wrap_mask=np.ones(ndim, bool), rng=rng)
        rotations = best
        trace.append(("rotations", -best_f, time.perf_counter() - t0))

        # stage 2: translations among historical images
        t0 = time.perf_counter()
        full_rot = np.concatenate([[0.0], rotations])
        tg = _translation_graph(group, mask, full_rot)
        init = greedy_init(tg, reference=0)
        init_v = np.array([
            _compose_along_path(group, full_rot, init[k][0]).translation
            for k in range(1, n)])
        flat = init_v.reshape(-1)
        particles = flat[None, :] + rng.normal(
            0.0, cfg.translation_noise_sigma, (cfg.pso.particle_count, len(flat)))
        any_space = group.pairwise[min(group.pairwise)]
        lo = np.tile([any_space.extent.vx_min, any_space.extent.vy_min], n - 1)
        hi = np.tile([any_space.extent.vx_max, any_space.extent.vy_max], n - 1)
        obj = _translation_objective(group, mask, rotations)
        best, best_f = pso_minimize(obj, (lo, hi), particles, cfg.pso, rng=rng)
        translations = best.reshape(-1, 2)
        trace.append(("translations", -best_f, time.perf_counter() - t0))

    # stage 3: translation and rotation to the reference
    t0 = time.perf_counter()
    rel = [RigidTransform.identity()]
    rel += [RigidTransform(translations[k - 1][0], translations[k - 1][1],
                           rotations[k - 1]) for k in range(1, n)]
    candidates = []
    for k in range(n):
        t_hat = group.direct[k].argmax_transform()
        cand = compose_rigid(t_hat, invert_rigid(rel[k]))
        score = sum(group.direct[j].lookup(compose_rigid(cand, rel[j]))
                    for j in range(n))
        candidates.append((score, k, cand))
    candidates.sort(key=lambda c: (-c[0], c[1]))
    seeds = [c[2] for c in candidates[:cfg.reference_particles]]
    best_cand = seeds[0]
    while len(seeds) < cfg.reference_particles:
        seeds.append(RigidTransform(
            best_cand.vx + rng.normal(0, cfg.reference_pad_sigma_m),
            best_cand.vy + rng.normal(0, cfg.reference_pad_sigma_m),
            best_cand.gamma + rng.normal(0, np.radians(cfg.reference_pad_sigma_deg))))
    particles = np.array([[s.vx, s.vy, s.gamma] for s in seeds])

    def ref_obj(x):
        val = np.zeros(len(x))
        for i, row in enumerate(x):
            t0_ = RigidTransform(*row)
            val[i] = sum(group.direct[j].lookup(compose_rigid(t0_, rel[j]))
                         for j in range(n))
        return -val

    bx0, bx1, by0, by1 = _direct_bounds(group)
    best, _ = pso_minimize(
        ref_obj, (np.array([bx0, by0, 0.0]), np.array([bx1, by1, TWO_PI])),
        particles, cfg.pso, wrap_mask=np.array([False, False, True]), rng=rng)
    t_ref = RigidTransform(*best)
    stage3 = [compose_rigid(t_ref, rel[j]) for j in range(n)]
    f_stage3 = fitness_full(group, mask, stage3)
    if not np.isfinite(f_stage3):
        raise ValueError("stage-3 fitness is not finite")
    trace.append(("reference", f_stage3, time.perf_counter() - t0))

    # stage 4: joint refinement of all 3N parameters
    t0 = time.perf_counter()
    x0 = np.concatenate([[t.vx, t.vy, t.gamma] for t in stage3])

    def joint(x):
        return fitness_full(group, mask, _transforms_from_params(x))

    steps = np.tile([cfg.refine_step_m, cfg.refine_step_m,
                     np.radians(cfg.refine_step_deg)], n)
    xr, fr = refine_maximize(joint, x0, steps)
    final = _transforms_from_params(xr)
    f_final = fitness_full(group, mask, final)
    if not np.isfinite(f_final):
        raise ValueError("refined fitness is not finite")
    trace.append(("refinement", f_final, time.perf_counter() - t0))
    return GroupSolution(final, f_final, trace)


def solve_direct_pso(group: ImageGroup, mask: RelationMask, particle_count: int,
                     cfg: SolverConfig | None = None) -> GroupSolution:
    """Single PSO over all 3N parameters, initial particles sampled from the
    direct-relation estimators interpreted as discrete distributions."""
    cfg = cfg or SolverConfig()
    n = group.n
    rng = np.random.default_rng(cfg.pso.rng_seed)
    t0 = time.perf_counter()

    particles = np.zeros((particle_count, 3 * n))
    for k in range(n):
        samples = group.direct[k].sample_transforms(rng, particle_count)
        particles[:, 3 * k:3 * k + 3] = [[s.vx, s.vy, s.gamma] for s in samples]

    bx0, bx1, by0, by1 = _direct_bounds(group)
    lo = np.tile([bx0, by0, 0.0], n)
    hi = np.tile([bx1, by1, TWO_PI], n)
    wrap = np.tile([False, False, True], n)

    def obj(x):
        return -np.array([fitness_full(group, mask, _transforms_from_params(row))
                          for row in x])

    pso = PsoConfig(particle_count=particle_count, max_iters=cfg.pso.max_iters,
                    inertia=cfg.pso.inertia, cognitive=cfg.pso.cognitive,
                    social=cfg.pso.social, stall_iters=cfg.pso.stall_iters,
                    rng_seed=cfg.pso.rng_seed)
    best, best_f = pso_minimize(obj, (lo, hi), particles, pso, wrap_mask=wrap,
                                rng=rng)
    final = _transforms_from_params(best)
    f_final = fitness_full(group, mask, final)
    if not np.isfinite(f_final):
        raise ValueError("direct-PSO fitness is not finite")
    return GroupSolution(final, f_final,
                         [("direct_pso", f_final, time.perf_counter() - t0)])
