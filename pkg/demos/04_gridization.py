"""
Grouping location-free reports into virtual grids
=================================================

Without positions, reports can still be keyed by their beam fingerprint:
peak-normalized RSRP in dB, which does not depend on the link's path loss.
K-means on fingerprints recovers which reports came from the same place.
"""

from dataclasses import replace

import numpy as np

from pemsim.config import RunConfig
from pemsim.pipeline import gridize_dataset, make_world
from pemsim.stf import fingerprint, gridize, purity

cfg = RunConfig()
world = make_world(replace(cfg, scenario=replace(cfg.scenario, n_tx=8)))
records, truth = gridize_dataset(world, cfg.gridize)
print(f"{len(records)} reports from grids {sorted(set(truth.tolist()))}")

###############################################################################
# The fingerprint of a report is unchanged by a power-of-two gain.
f = fingerprint(records[0])
print("fingerprint (dB):", np.round(f, 1))
print("same after x2^-20:", np.array_equal(f, fingerprint(records[0].rsrp * 2.0 ** -20)))

###############################################################################
# Cluster and score against the withheld true grids.
result = gridize(records, cfg.gridize.n_virtual, cfg.gridize.max_iters, np.random.default_rng(0))
print(f"converged in {result.n_iters} iterations, purity {purity(result.assignments, truth):.3f}")
