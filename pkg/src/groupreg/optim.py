"""Particle swarm optimization and finite-difference quasi-Newton refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

STALL_REL_TOL = 1e-6


@dataclass(frozen=True)
class PsoConfig:
    particle_count: int = 150
    max_iters: int = 300
    inertia: float = 0.7298
    cognitive: float = 1.4962
    social: float = 1.4962
    stall_iters: int = 40
    rng_seed: int = 0

    def __post_init__(self):
        if self.particle_count < 1:
            raise ValueError("particle_count must be >= 1")
        if min(self.inertia, self.cognitive, self.social) <= 0:
            raise ValueError("PSO coefficients must be positive")


def pso_minimize(objective, bounds, init_particles, cfg: PsoConfig,
                 wrap_mask=None, rng=None):
    """Global-best PSO.  objective maps a (P, D) position array to (P,) values.

    bounds is (lo, hi) arrays of length D; dimensions flagged in wrap_mask
    wrap around their range instead of clamping.  Reproducible given
    cfg.rng_seed (or an explicit Generator).
    """
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    d = len(lo)
    if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
        raise ValueError("bounds must be finite")
    wrap = np.zeros(d, bool) if wrap_mask is None else np.asarray(wrap_mask, bool)
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)

    span = hi - lo
    if init_particles is None:
        x = lo + rng.random((cfg.particle_count, d)) * span
    else:
        x = np.array(init_particles, dtype=float)
    p = x.shape[0]
    # small random initial velocities keep identical injected particles from
    # freezing (zero pbest/gbest deltas give zero velocity forever)
    v = rng.uniform(-0.1, 0.1, size=x.shape) * span

    def _confine(pos):
        pos[:, wrap] = lo[wrap] + (pos[:, wrap] - lo[wrap]) % span[wrap]
        pos[:, ~wrap] = np.clip(pos[:, ~wrap], lo[~wrap], hi[~wrap])
        return pos

    x = _confine(x)
    fx = np.asarray(objective(x), dtype=float)
    pbest = x.copy()
    pbest_f = fx.copy()
    g = int(np.argmin(pbest_f))
    gbest = pbest[g].copy()
    gbest_f = float(pbest_f[g])

    stall = 0
    for _ in range(cfg.max_iters):
        r1 = rng.random((p, d))
        r2 = rng.random((p, d))
        dp = pbest - x
        dg = gbest[None, :] - x
        # shortest angular differences on wrapped dims
        dp[:, wrap] = (dp[:, wrap] + span[wrap] / 2) % span[wrap] - span[wrap] / 2
        dg[:, wrap] = (dg[:, wrap] + span[wrap] / 2) % span[wrap] - span[wrap] / 2
        v = cfg.inertia * v + cfg.cognitive * r1 * dp + cfg.social * r2 * dg
        np.clip(v, -span, span, out=v)
        x = _confine(x + v)
        fx = np.asarray(objective(x), dtype=float)
        better = fx < pbest_f
        pbest[better] = x[better]
        pbest_f[better] = fx[better]
        g = int(np.argmin(pbest_f))
        improvement = gbest_f - float(pbest_f[g])
        if improvement > STALL_REL_TOL * max(abs(gbest_f), 1e-12):
            stall = 0
        else:
            stall += 1
        if pbest_f[g] < gbest_f:
            gbest = pbest[g].copy()
            gbest_f = float(pbest_f[g])
        if stall >= cfg.stall_iters:
            break
    return gbest, gbest_f


def fd_gradient(fun, x, steps):
    """Central finite-difference gradient with per-dimension steps."""
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = steps[i]
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * steps[i])
    return g


def refine_maximize(fun, x0, steps, max_iters: int = 80):
    """BFGS-style local ascent of fun using central FD gradients.

    Never returns a point worse than x0 (monotone ascent contract).
    """
    x0 = np.asarray(x0, float)
    steps = np.asarray(steps, float)
    f0 = fun(x0)

    neg = lambda x: -fun(x)
    jac = lambda x: -fd_gradient(fun, x, steps)
    res = optimize.minimize(neg, x0, jac=jac, method="BFGS",
                            options={"maxiter": max_iters, "gtol": 1e-10})
    if np.isfinite(res.fun) and -res.fun > f0:
        return res.x, float(-res.fun)
    return x0.copy(), float(f0)
