"""Solution spread of the groupwise solver across solver seeds on a fixed
planted scenario (features and voting spaces are computed once).

Example:
    python3 scripts/stability_study.py --images 5 --runs 50
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from groupreg.config import PipelineConfig
from groupreg.pipeline import stability_report

from compare_optimizers import build_group


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--images", type=int, default=5)
    ap.add_argument("--runs", type=int, default=50)
    ap.add_argument("--scenario-seed", type=int, default=0)
    ap.add_argument("--occlusion", type=float, default=0.3)
    args = ap.parse_args()

    t0 = time.perf_counter()
    group, mask = build_group(args.images, args.scenario_seed, args.occlusion)
    print(f"group built in {time.perf_counter() - t0:.1f}s")

    t0 = time.perf_counter()
    rep = stability_report(group, mask, PipelineConfig(extent_m=250.0),
                           runs=args.runs)
    print(f"{args.runs} solves in {time.perf_counter() - t0:.1f}s")
    print(f"{'image':>5} {'mean_vx':>9} {'mean_vy':>9} {'mean_deg':>9} "
          f"{'std_px':>8} {'std_deg':>8}")
    for k in range(args.images):
        vx, vy, g = rep.mean[k]
        print(f"{k:>5} {vx:>9.2f} {vy:>9.2f} {np.degrees(g):>9.2f} "
              f"{rep.std_translation[k]:>8.3f} {rep.std_rotation_deg[k]:>8.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
