"""Desk-scale CSD* run: train the 16x16 score net, then compare CSD* with GN on SSIM.

Training takes several minutes on one core.  ``--k-prime`` accepts a list
so one trained model can be evaluated at several hijack depths.
"""

import argparse
import dataclasses
import time

import numpy as np

from dgmeit.dgm.csd import RasterContext
from dgmeit.dgm.desk import EVAL_SEED0, DeskConfig, run_case, train_desk_score
from dgmeit.mesh import build_disk_mesh


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cases", type=int, default=50)
    ap.add_argument("--first-seed", type=int, default=EVAL_SEED0)
    ap.add_argument("--k-prime", default="50", help="comma-separated list")
    ap.add_argument("--corrector-steps", type=int, default=0)
    args = ap.parse_args()

    cfg = DeskConfig()
    ctx = RasterContext(build_disk_mesh(), side=cfg.side)
    t0 = time.perf_counter()
    score = train_desk_score(ctx, cfg)
    print(f"score trained in {time.perf_counter() - t0:.0f} s")
    for kp in (int(k) for k in args.k_prime.split(",")):
        sampler = dataclasses.replace(cfg.sampler, K_prime=kp, corrector_steps=args.corrector_steps)
        run_cfg = dataclasses.replace(cfg, sampler=sampler)
        cases = [run_case(args.first_seed + i, score, ctx, run_cfg) for i in range(args.cases)]
        gn = np.array([c.ssim_gn for c in cases])
        csd = np.array([c.ssim_csd for c in cases])
        print(f"K'={kp}: CSD* wins {np.mean(csd > gn):.2f}; SSIM GN {gn.mean():.3f}±{gn.std():.3f}, "
              f"CSD* {csd.mean():.3f}±{csd.std():.3f}")


if __name__ == "__main__":
    main()
