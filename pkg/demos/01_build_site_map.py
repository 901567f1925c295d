"""
Building a site map from measurement reports
============================================

A site map answers one question: given a grid ``z`` and an hour ``t``, what
do we know about the channel and the traffic there? This demo builds one for
a single base station from synthetic RSRP reports and grid traffic logs.
"""

import numpy as np

from pemsim.dtm import generate_traffic_records
from pemsim.env import ScenarioConfig, TrafficGroundTruth, build_grid_map, generate_path_profiles
from pemsim.meas import MrSampling, dft_codebook, generate_mr_dataset
from pemsim.pem import PemConfig, build_pem, query

# A 150 m square with a 16-antenna array in the lower-left corner.
scen = ScenarioConfig(150.0, 150.0, 10.0, bs_positions=((0.0, 0.0),), n_tx=16, rng_seed=1)
grid_map = build_grid_map(scen)
profiles = generate_path_profiles(scen, grid_map, np.random.default_rng(1))
print(f"{grid_map.n_grids} grids, {scen.n_paths} paths per link")

###############################################################################
# Measurements: only 60% of grids ever report, each with a few RSRP vectors
# taken over an oversampled DFT codebook.
codebook = dft_codebook(16, 32)
mr = generate_mr_dataset(profiles, grid_map, codebook, MrSampling(2.0, 0.6, 200),
                         np.random.default_rng(2))
print(f"{len(mr)} reports from {len({r.grid_id for r in mr})} grids")

###############################################################################
# Traffic follows one Gaussian hotspot with a daily rhythm.
truth = TrafficGroundTruth(np.array([[100.0, 60.0]]), np.array([np.eye(2) * 150.0]),
                           np.array([1.0]), 1000.0, 3000.0, 24.0, 0.01)
traffic = generate_traffic_records(truth, grid_map, 168.0, 1.0, np.random.default_rng(3))

###############################################################################
# Build: per-grid APS recovery, interpolation of silent grids, traffic fits.
pem = build_pem(mr, traffic, grid_map, codebook, PemConfig(angle_oversampling=8))
for key, value in pem.report.items():
    print(f"  {key}: {value}")

###############################################################################
# Query the hotspot grid at the daily peak (6 h) and trough (18 h).
hot = int(np.argmax(truth.density(grid_map.centers)))
for t in (6.0, 18.0):
    r = query(pem, hot, t)
    ev = np.linalg.eigvalsh(r.covariance)[::-1]
    print(f"t={t:4.1f} h  traffic={r.traffic_mean:8.1f}  occurrence={r.occurrence_weight:.3f}  "
          f"top eigenvalue share={ev[0] / ev.sum():.2f}  aps={r.provenance['aps']}")
