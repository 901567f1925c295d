"""Scenario assembly shared by the experiments and the command line."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import GridMap, ScenarioConfig, TrafficGroundTruth, build_grid_map, generate_path_profiles
from .dtm import generate_traffic_records
from .meas import (BeamCodebook, MrSampling, RsrpRecord, dft_codebook, generate_mr_dataset, hide_locations,
                   synthesize_rsrp)
from .pem import Pem, PemConfig, build_pem

# Sub-stream tags; each kind of randomness gets its own stream off the master seed.
STREAM_PROFILES, STREAM_TRAFFIC, STREAM_MR, STREAM_GRIDIZE = 0, 1, 2, 5


@dataclass
class World:
    scenario: ScenarioConfig
    grid_map: GridMap
    profiles: list = field(repr=False)
    traffic_truth: TrafficGroundTruth = field(repr=False)
    traffic_records: list = field(repr=False)
    codebook: BeamCodebook = field(repr=False)
    mr_records: list = field(repr=False)
    pem_config: PemConfig = field(default_factory=PemConfig)
    metadata: dict = field(default_factory=dict)
    sampling: MrSampling = field(default_factory=MrSampling)


def make_world(config, scenario=None, traffic=None, measurement=None) -> World:
    """Generate geometry, channels, traffic logs and MR reports for ``config``.

    ``scenario``/``traffic``/``measurement`` override the top-level sections
    (the receive-beam study uses its own).
    """
    from .config import config_hash

    scen = scenario or config.scenario
    traffic = traffic or config.traffic
    measurement = measurement or config.measurement
    seed = scen.rng_seed
    grid_map = build_grid_map(scen)
    profiles = generate_path_profiles(scen, grid_map, np.random.default_rng([seed, STREAM_PROFILES]))
    truth = traffic.ground_truth()
    records = generate_traffic_records(truth, grid_map, traffic.horizon_h, traffic.step_h,
                                       np.random.default_rng([seed, STREAM_TRAFFIC]),
                                       traffic.users_per_unit)
    codebook = dft_codebook(scen.n_tx, measurement.beams_per_antenna * scen.n_tx)
    sampling = measurement.sampling(traffic.horizon_h)
    mr = generate_mr_dataset(profiles, grid_map, codebook, sampling,
                             np.random.default_rng([seed, STREAM_MR, scen.n_tx]))
    meta = {"seed": seed, "config_hash": config_hash(config)}
    return World(scen, grid_map, profiles, truth, records, codebook, mr, config.pem, meta, sampling)


def build_site_maps(world: World) -> list[Pem]:
    """One map per base station, each covering the whole area."""
    return [build_pem(world.mr_records, world.traffic_records, world.grid_map, world.codebook,
                      world.pem_config, c, world.metadata)
            for c in range(world.scenario.n_cells)]


def gridize_dataset(world: World, gridize_config, rng=None):
    """Location-free RSRP records of a few grids of one cell, plus their true grids.

    Returns ``(records, truth)`` where every record carries the UNKNOWN tag.
    """
    gc = gridize_config
    if not 0 <= gc.cell < world.scenario.n_cells:
        raise ValueError(f"cell {gc.cell} does not exist")
    if gc.grids is None:
        own = world.grid_map.grids_of_cell(gc.cell)
        if len(own) < gc.n_virtual:
            raise ValueError("cell has fewer grids than n_virtual")
        grids = own[np.round(np.linspace(0, len(own) - 1, gc.n_virtual)).astype(int)]
    else:
        grids = np.asarray(gc.grids, dtype=int)
    if rng is None:
        rng = np.random.default_rng([world.scenario.rng_seed, STREAM_GRIDIZE])
    sm = world.sampling
    records, truth = [], []
    for g in grids:
        for _ in range(gc.records_per_grid):
            rsrp = synthesize_rsrp(world.profiles[gc.cell][g], world.codebook, sm.n_snapshots,
                                   sm.meas_noise_std, rng)
            records.append(RsrpRecord(len(records), int(g), gc.cell,
                                      float(rng.uniform(0.0, sm.horizon_h)), rsrp, sm.n_snapshots))
            truth.append(int(g))
    return hide_locations(records), np.array(truth)
