"""Command-line interface.

Subcommands: extract, hough, register, guided, eval, synth, run.  Options
come from defaults, then an optional key=value config file, then flags
(flags win).  The cache directory can also be set through the
GROUPREG_CACHE_DIR environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import cache as cachemod
from .config import ConfigError, PipelineConfig, load_config
from .evaluation import (load_ground_truth, rigid_component_errors, rmse,
                         save_ground_truth, save_metrics)
from .geometry import RigidTransform
from .image import load_image, save_image
from .pipeline import (PipelineError, PipelineInputs, build_group,
                       extract_features_cached, resolve_cache_dir,
                       run_pipeline, stability_report, _guided_config,
                       _solver_config)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--cache-dir", help="stage cache directory")
    p.add_argument("--threads", type=int,
                   help="worker cap (computation is sequential; accepted for "
                        "interface stability)")
    p.add_argument("--seed", type=int, dest="rng_seed", help="master RNG seed")
    for f in dataclasses.fields(PipelineConfig):
        if f.name in ("rng_seed", "threads", "runs"):
            continue
        p.add_argument(f"--{f.name.replace('_', '-')}",
                       type=int if f.type == "int" else float, dest=f.name)


def _config_from_args(args) -> PipelineConfig:
    overrides = {f.name: getattr(args, f.name, None)
                 for f in dataclasses.fields(PipelineConfig)}
    return load_config(getattr(args, "config", None), overrides)


def _inputs_from_args(args, need_output=True) -> PipelineInputs:
    return PipelineInputs(
        reference_path=args.reference,
        historical_paths=list(args.images),
        ground_truth_path=getattr(args, "ground_truth", None),
        output_dir=getattr(args, "output", "."),
        cache_dir=getattr(args, "cache_dir", None),
        write_mosaic=bool(getattr(args, "mosaic", False)),
    )


def cmd_extract(args) -> int:
    cfg = _config_from_args(args)
    inputs = PipelineInputs(reference_path=args.image, historical_paths=[],
                            cache_dir=args.cache_dir,
                            output_dir=args.output or ".")
    feats = extract_features_cached(args.image, cfg, resolve_cache_dir(inputs))
    cachemod.save_features(args.out, feats)
    print(f"{len(feats)} features -> {args.out}")
    return 0


def cmd_hough(args) -> int:
    from .features import top_k_matches
    from .hough import Extent, build_hough_space
    cfg = _config_from_args(args)
    fa = cachemod.load_features(args.features_a)
    fb = cachemod.load_features(args.features_b)
    matches = top_k_matches(fa, fb, cfg.top_k_matches)
    space = build_hough_space(matches, Extent.symmetric(cfg.extent_m),
                              zoning_cell=cfg.zoning_cell_m,
                              trans_bin=cfg.trans_bin_m,
                              rot_bins=cfg.rot_bins,
                              smooth_sigma=cfg.smooth_sigma_m)
    cachemod.save_hough_space(args.out, space)
    t = space.argmax_transform()
    print(f"{len(space.mass)} cells, argmax "
          f"({t.vx:.1f} m, {t.vy:.1f} m, {np.degrees(t.gamma):.1f} deg) "
          f"-> {args.out}")
    return 0


def cmd_register(args) -> int:
    from .groupwise import solve_sequential
    cfg = _config_from_args(args)
    inputs = _inputs_from_args(args)
    cache_dir = resolve_cache_dir(inputs)
    paths = [args.reference] + list(args.images)
    from .pipeline import _file_digest
    feats = [extract_features_cached(p, cfg, cache_dir) for p in paths]
    group, mask = build_group(feats, cfg, cache_dir,
                              [_file_digest(p) for p in paths])
    if args.runs and args.runs > 1:
        rep = stability_report(group, mask, cfg, args.runs)
        for k in range(len(rep.std_translation)):
            m = rep.mean[k]
            print(f"image {k}: mean ({m[0]:.2f} m, {m[1]:.2f} m, "
                  f"{np.degrees(m[2]):.2f} deg)  "
                  f"std {rep.std_translation[k]:.2f} m / "
                  f"{rep.std_rotation_deg[k]:.3f} deg over {len(rep.seeds)} runs")
        sol_t = rep.transforms[0]
    else:
        sol = solve_sequential(group, mask, _solver_config(cfg))
        print(f"fitness {sol.fitness:.6f}")
        for name, fit, dt in sol.stage_trace:
            print(f"  {name}: fitness={fit:.6f} time={dt:.2f}s")
        sol_t = sol.transforms
    cachemod.save_transforms(args.out, sol_t)
    for k, t in enumerate(sol_t):
        print(f"image {k}: ({t.vx:.2f} m, {t.vy:.2f} m, "
              f"{np.degrees(t.gamma):.2f} deg)")
    return 0


def cmd_guided(args) -> int:
    from .guided import guided_match, ransac_homography
    cfg = _config_from_args(args)
    img_a = load_image(args.image_a)
    img_b = load_image(args.image_b)
    prior = cachemod.load_transforms(args.prior)[args.prior_index]
    gcfg = _guided_config(cfg)
    res = guided_match(img_a, img_b, prior, gcfg)
    h, mask = ransac_homography(res.points_a, res.points_b, gcfg)
    cachemod.save_homography(args.out, h)
    print(f"{res.n_candidates} candidates, {len(res.points_a)} gated, "
          f"{int(mask.sum())} inliers -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    gt = load_ground_truth(args.ground_truth)
    rows = []
    true_t = (cachemod.load_transforms(args.true_transforms)
              if args.true_transforms else None)
    est_t = cachemod.load_transforms(args.transforms) if args.transforms else None
    for k in sorted(gt):
        if args.homographies:
            transform = cachemod.load_homography(
                args.homographies.format(k=k))
        else:
            transform = est_t[k]
        err = rmse(gt[k], transform)
        if true_t is not None and est_t is not None:
            dv, dg = rigid_component_errors(est_t[k], true_t[k])
        else:
            dv = dg = None
        rows.append((k, err, dv, dg))
        print(f"image {k}: rmse {err:.3f} m"
              + (f", trans err {dv:.3f} m, rot err {dg:.3f} deg"
                 if dv is not None else ""))
    save_metrics(args.out, rows)
    return 0


def cmd_synth(args) -> int:
    import os
    from .synth import Corruption, SyntheticScenario, generate_scenario
    from .evaluation import GroundTruthCorrespondences
    rng = np.random.default_rng(args.seed)
    transforms = []
    for _ in range(args.count):
        transforms.append(RigidTransform(
            rng.uniform(-args.max_shift, args.max_shift),
            rng.uniform(-args.max_shift, args.max_shift),
            rng.uniform(0, 2 * np.pi)))
    spec = SyntheticScenario(
        args.size, tuple(transforms), texture_seed=args.seed,
        corruption=Corruption(args.occlusion, args.brightness, args.noise),
        scale_drifts=tuple([args.scale_drift] * args.count)
        if args.scale_drift else ())
    data = generate_scenario(spec)
    os.makedirs(args.output, exist_ok=True)
    ref_path = os.path.join(args.output, "reference.png")
    save_image(data.reference, ref_path)
    for k, img in enumerate(data.historical):
        save_image(img, os.path.join(args.output, f"historical_{k:02d}.png"))
    cachemod.save_transforms(os.path.join(args.output, "true_transforms.txt"),
                             data.transforms)
    gt = {k: GroundTruthCorrespondences(v[:, 0], v[:, 1])
          for k, v in data.ground_truth.items()}
    save_ground_truth(os.path.join(args.output, "ground_truth.csv"), gt)
    print(f"scenario with {args.count} images -> {args.output}")
    return 0


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    inputs = _inputs_from_args(args)
    result = run_pipeline(cfg, inputs)
    for k, t in enumerate(result.transforms):
        tag = " (rigid fallback)" if result.rigid_fallback[k] else ""
        print(f"image {k}: ({t.vx:.2f} m, {t.vy:.2f} m, "
              f"{np.degrees(t.gamma):.2f} deg){tag}")
    for k, err, _, _ in result.metrics:
        print(f"image {k}: rmse {err:.3f} m" if err is not None
              else f"image {k}: no ground truth")
    for stage, dt in result.timings:
        print(f"[{stage}] {dt:.2f}s")
    if args.runs and args.runs > 1:
        cache_dir = resolve_cache_dir(inputs)
        from .pipeline import _file_digest
        paths = [args.reference] + list(args.images)
        feats = [extract_features_cached(p, cfg, cache_dir) for p in paths]
        group, mask = build_group(feats, cfg, cache_dir,
                                  [_file_digest(p) for p in paths])
        rep = stability_report(group, mask, cfg, args.runs)
        for k in range(len(rep.std_translation)):
            print(f"image {k}: std {rep.std_translation[k]:.2f} m / "
                  f"{rep.std_rotation_deg[k]:.3f} deg over {len(rep.seeds)} runs")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="groupreg",
        description="Groupwise registration of aerial images to a reference "
                    "map via Hough-space likelihood optimization.")
    sub = p.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("extract", help="dense features for one image")
    pe.add_argument("image")
    pe.add_argument("out")
    pe.add_argument("--output", default=".")
    _add_config_flags(pe)
    pe.set_defaults(fn=cmd_extract)

    ph = sub.add_parser("hough", help="voting space from two feature blobs")
    ph.add_argument("features_a")
    ph.add_argument("features_b")
    ph.add_argument("out")
    _add_config_flags(ph)
    ph.set_defaults(fn=cmd_hough)

    pr = sub.add_parser("register", help="groupwise rigid registration")
    pr.add_argument("reference")
    pr.add_argument("images", nargs="+")
    pr.add_argument("--out", default="transforms.txt")
    pr.add_argument("--output", default=".")
    pr.add_argument("--runs", type=int, default=1,
                    help="re-solve with varied seeds and report the spread")
    _add_config_flags(pr)
    pr.set_defaults(fn=cmd_register)

    pg = sub.add_parser("guided", help="prior-guided homography for one pair")
    pg.add_argument("image_a")
    pg.add_argument("image_b")
    pg.add_argument("prior", help="transforms file holding the rigid prior")
    pg.add_argument("--prior-index", type=int, default=0)
    pg.add_argument("--out", default="homography.txt")
    _add_config_flags(pg)
    pg.set_defaults(fn=cmd_guided)

    pv = sub.add_parser("eval", help="metrics from ground-truth CSV")
    pv.add_argument("ground_truth")
    pv.add_argument("--transforms")
    pv.add_argument("--true-transforms", dest="true_transforms")
    pv.add_argument("--homographies",
                    help="pattern with {k}, e.g. out/homography_{k:02d}.txt")
    pv.add_argument("--out", default="metrics.csv")
    pv.set_defaults(fn=cmd_eval)

    ps = sub.add_parser("synth", help="generate a synthetic scenario")
    ps.add_argument("output")
    ps.add_argument("--count", type=int, default=3)
    ps.add_argument("--size", type=int, default=512)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--max-shift", type=float, default=100.0)
    ps.add_argument("--occlusion", type=float, default=0.0)
    ps.add_argument("--brightness", type=float, default=0.0)
    ps.add_argument("--noise", type=float, default=0.0)
    ps.add_argument("--scale-drift", type=float, default=0.0)
    ps.set_defaults(fn=cmd_synth)

    pp = sub.add_parser("run", help="full pipeline")
    pp.add_argument("reference")
    pp.add_argument("images", nargs="+")
    pp.add_argument("--ground-truth", dest="ground_truth")
    pp.add_argument("--output", default=".")
    pp.add_argument("--mosaic", action="store_true")
    pp.add_argument("--runs", type=int, default=1)
    _add_config_flags(pp)
    pp.set_defaults(fn=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, PipelineError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
