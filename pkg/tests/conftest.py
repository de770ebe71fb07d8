"""Shared fixtures: planted scenarios with precomputed features and spaces.

Heavy artifacts are session-scoped so the expensive feature/matching work
runs once per test session.
"""

import numpy as np
import pytest

from groupreg.features import (DESCRIPTOR_SIZE, FeatureSet, MatchSet,
                               dense_sample, top_k_matches)
from groupreg.geometry import (RigidTransform, apply_rigid,
                               compose_via_reference)
from groupreg.groupwise import ImageGroup, RelationMask
from groupreg.hough import Extent, build_hough_space
from groupreg.synth import Corruption, SyntheticScenario, generate_scenario

TWO_PI = 2 * np.pi

# desk-scale extraction parameters used across the suite
DESK_STEP = 10.0
DESK_SUPPORT = 48.0
DESK_TOP_K = 20000
DESK_ZONING = 50.0
DESK_EXTENT = 220.0


def matchset_from_pairs(pairs):
    """pairs: list of ((xa, ya, tha), (xb, yb, thb), similarity)."""
    pairs = sorted(pairs, key=lambda p: -p[2])
    fa = FeatureSet([p[0][0] for p in pairs], [p[0][1] for p in pairs],
                    np.full(len(pairs), 10.0), [p[0][2] % TWO_PI for p in pairs],
                    np.zeros((len(pairs), DESCRIPTOR_SIZE), np.float32))
    fb = FeatureSet([p[1][0] for p in pairs], [p[1][1] for p in pairs],
                    np.full(len(pairs), 10.0), [p[1][2] % TWO_PI for p in pairs],
                    np.zeros((len(pairs), DESCRIPTOR_SIZE), np.float32))
    idx = np.arange(len(pairs))
    return MatchSet(fa, fb, idx, idx, [p[2] for p in pairs])


def planted_matchset(t, n=200, seed=0, extra_noise=0):
    """Matches induced by a planted transform plus optional random clutter."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        pa = rng.uniform(-200, 200, 2)
        tha = rng.uniform(0, TWO_PI)
        pb = apply_rigid(t, pa)
        pairs.append(((pa[0], pa[1], tha), (pb[0], pb[1], tha - t.gamma),
                      rng.uniform(1.0, 2.0)))
    for _ in range(extra_noise):
        pa = rng.uniform(-200, 200, 2)
        pb = rng.uniform(-200, 200, 2)
        pairs.append(((pa[0], pa[1], rng.uniform(0, TWO_PI)),
                      (pb[0], pb[1], rng.uniform(0, TWO_PI)),
                      rng.uniform(0.2, 0.9)))
    return matchset_from_pairs(pairs)


def synthetic_group(transforms, extent=250.0, n_votes=200, clutter=0,
                    seed=0, zoning=60.0):
    """ImageGroup built from exact planted votes, no image pipeline.

    transforms[k] maps historical image k into the reference frame; pairwise
    spaces are planted at the composed k -> l relations.
    """
    n = len(transforms)
    ext = Extent.symmetric(extent)
    direct = [build_hough_space(
        planted_matchset(t, n=n_votes, seed=seed + k, extra_noise=clutter),
        ext, zoning_cell=zoning) for k, t in enumerate(transforms)]
    pairwise = {}
    for k in range(n):
        for l in range(k + 1, n):
            rel = compose_via_reference(transforms[k], transforms[l])
            pairwise[(k, l)] = build_hough_space(
                planted_matchset(rel, n=n_votes, seed=seed + 100 + 10 * k + l,
                                 extra_noise=clutter),
                ext, zoning_cell=zoning)
    return ImageGroup(direct, pairwise), RelationMask.all_ones(n)


def extract_all(data, step=DESK_STEP, support=DESK_SUPPORT):
    return [dense_sample(img, step=step, support=support)
            for img in [data.reference] + data.historical]


def build_group_from_feats(feats, extent=DESK_EXTENT, top_k=DESK_TOP_K,
                           zoning=DESK_ZONING):
    n = len(feats) - 1
    ext = Extent.symmetric(extent)
    direct = [build_hough_space(top_k_matches(feats[1 + k], feats[0], top_k),
                                ext, zoning_cell=zoning)
              for k in range(n)]
    pairwise = {}
    for k in range(n):
        for l in range(k + 1, n):
            pairwise[(k, l)] = build_hough_space(
                top_k_matches(feats[1 + k], feats[1 + l], top_k), ext,
                zoning_cell=zoning)
    return ImageGroup(direct, pairwise), RelationMask.all_ones(n)


@pytest.fixture(scope="session")
def planted_pair():
    """Two-image scenario with a single planted transform, light corruption."""
    transforms = (RigidTransform(60.0, -110.0, np.radians(138.0)),)
    spec = SyntheticScenario(512, transforms, texture_seed=3,
                             corruption=Corruption(0.2, 0.03, 0.02))
    return spec, generate_scenario(spec)


@pytest.fixture(scope="session")
def planted_trio():
    """Three-image scenario used by the solver and estimator tests."""
    transforms = (RigidTransform(60.0, -110.0, np.radians(138.0)),
                  RigidTransform(-45.0, 30.0, np.radians(17.0)),
                  RigidTransform(5.0, 80.0, np.radians(301.0)))
    spec = SyntheticScenario(512, transforms, texture_seed=3,
                             corruption=Corruption(0.3, 0.05, 0.02))
    return spec, generate_scenario(spec)


@pytest.fixture(scope="session")
def trio_group(planted_trio):
    _, data = planted_trio
    feats = extract_all(data)
    group, mask = build_group_from_feats(feats)
    return group, mask, data
