"""Calibrate the particle fixed-point threshold with a large population.

Runs the bundled scalar unit-noise game at M = 10^6 and writes the observed
max deviation (mostly Euler bias), the conditional spread of the particles and
the envelope expected at a smaller M to calibration/fixed_point_m1e6.json.

    python3 scripts/calibrate_fixed_point.py [--config configs/p2_scalar.cfg] [--particles 1000000]
"""

from __future__ import annotations

import argparse
import json
import math
import os

import numpy as np

from lifted_mfg.config import load_config
from lifted_mfg.runner import grid_of, solve_trajectories, value_of
from lifted_mfg.simulate import SimConfig, particle_fixed_point

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
# Max over ~1000 correlated Gaussian deviations stays below this many standard errors.
NOISE_MULTIPLE = 5.0
TARGET_PARTICLES = 100_000


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=os.path.join(ROOT, "configs", "p2_scalar.cfg"))
    ap.add_argument("--particles", type=int, default=1_000_000)
    ap.add_argument("--out", default=os.path.join(ROOT, "calibration", "fixed_point_m1e6.json"))
    args = ap.parse_args()

    cfg = load_config(args.config)
    grid = grid_of(cfg)
    traj = solve_trajectories(cfg, grid)
    value = value_of(cfg, traj)
    out = particle_fixed_point(SimConfig(args.particles, grid, cfg.seed, cfg.problem, cfg.data), traj, value.mean)
    spread = float(np.std(out.terminal_states[:, 0]))
    bias = out.max_deviation
    envelope = bias + NOISE_MULTIPLE * spread / math.sqrt(TARGET_PARTICLES)
    record = {
        "config": os.path.relpath(args.config, ROOT),
        "particles": args.particles,
        "steps": grid.steps,
        "seed": cfg.seed,
        "max_deviation": bias,
        "terminal_spread": spread,
        "noise_multiple": NOISE_MULTIPLE,
        "target_particles": TARGET_PARTICLES,
        "envelope_at_target": envelope,
        "threshold": 0.02,
    }
    os.makedirs(os.path.dirname(args.out), exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(record, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
