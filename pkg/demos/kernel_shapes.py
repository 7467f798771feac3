#!/usr/bin/env python
"""
Shapes of the stochastic completion kernel for a few curvatures.

Paths start at the origin heading along +x and keep a fixed curvature
plus a small random drift. Summing their visits over orientation gives
a 2-D picture of where a contour is likely to continue.
"""

import logging
import os
import sys

import numpy as np

from curvgroup import kernel as kn
from curvgroup import netpbm

logging.basicConfig(level=logging.INFO, format="%(message)s")
out = sys.argv[1] if len(sys.argv) > 1 else "demo-output"
os.makedirs(out, exist_ok=True)

H = 17                       # one third of a 51 px patch
dims = kn.default_dims(H)
params = kn.PathParams(H=H, n=100_000, sigma_kappa_diff=0.001, seed=1)
ys = np.arange(dims[1]) - dims[1] // 2

for i, k0 in enumerate((-0.08, -0.04, 0.0, 0.04, 0.08)):
    grid = kn.simulate_paths(k0, dims, params, slice_index=i)
    img = kn.project2d(grid, normalize=False)
    mean_y = (img.sum(axis=1) * ys).sum() / img.sum()
    logging.info("kappa %+.2f: mass %.3f, mean y %+.2f px", k0, grid.mass, mean_y)

    # gamma-stretched so faint tails stay visible; dark = frequent
    view = (img / img.max()) ** 0.4
    name = os.path.join(out, f"kernel_{k0:+.2f}.pgm")
    netpbm.write(name, np.rint(255 * (1 - view)).astype(np.uint8))

# Positive curvature bends toward +y, negative toward -y, and the two are
# mirror images of each other.
logging.info("projections written to %s", out)
