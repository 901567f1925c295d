"""Run configuration: nested dataclasses loaded from a YAML document.

Every section key matches a dataclass field name; unknown keys are
rejected so that typos surface as configuration errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .env import ScenarioConfig, TrafficGroundTruth
from .meas import MrSampling
from .pem import PemConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrafficConfig:
    gmm_means: tuple = ((60.0, 60.0),)
    gmm_covs: tuple = (((200.0, 0.0), (0.0, 200.0)),)
    gmm_weights: tuple = (1.0,)
    base: float = 1000.0
    peak: float = 3000.0
    period: float = 24.0
    noise_std: float = 0.01
    horizon_h: float = 168.0
    step_h: float = 1.0
    users_per_unit: float = 1.0

    def ground_truth(self) -> TrafficGroundTruth:
        return TrafficGroundTruth(np.array(self.gmm_means, dtype=float),
                                  np.array(self.gmm_covs, dtype=float),
                                  np.array(self.gmm_weights, dtype=float),
                                  self.base, self.peak, self.period, self.noise_std)


@dataclass(frozen=True)
class MeasurementConfig:
    records_per_grid_mean: float = 2.0
    coverage_fraction: float = 0.6
    n_snapshots: int = 200
    meas_noise_std: float = 0.0
    beams_per_antenna: int = 2

    def sampling(self, horizon_h: float) -> MrSampling:
        return MrSampling(self.records_per_grid_mean, self.coverage_fraction,
                          self.n_snapshots, self.meas_noise_std, horizon_h)


@dataclass(frozen=True)
class BfConfig:
    n0: int = 500
    n_tx_list: tuple = (8, 16, 32, 64)
    n_trials: int = 50
    pilot_noise_var: float = 1e-10
    wmmse_max_iters: int = 100
    wmmse_tol: float = 1e-4
    time_h: float = 6.0
    schemes: tuple = ("MCBF_IDEAL", "MCBF_CONV", "PCBF_CONV",
                      "PEMNET_MCBF", "PEMNET_PCBF", "PEMNET_SALINR")


@dataclass(frozen=True)
class RxbeamConfig:
    scenario: ScenarioConfig = field(default_factory=lambda: ScenarioConfig(
        area_width=150.0, area_height=150.0, grid_size=10.0,
        bs_positions=((0.0, 0.0),), n_tx=16, n_paths=4, rng_seed=11))
    traffic: TrafficConfig = field(default_factory=lambda: TrafficConfig(
        gmm_means=((40.0, 115.0), (105.0, 95.0), (120.0, 30.0)),
        gmm_covs=(((80.0, 0.0), (0.0, 80.0)),) * 3,
        gmm_weights=(0.4, 0.35, 0.25)))
    measurement: MeasurementConfig = field(default_factory=lambda: MeasurementConfig(
        coverage_fraction=0.8))
    d_list: tuple = (2, 4, 8)
    map_d: int = 2
    time_h: float = 6.0


@dataclass(frozen=True)
class GridizeConfig:
    n_virtual: int = 3
    max_iters: int = 100
    floor_db: float = -30.0
    cell: int = 0
    grids: tuple | None = None  # None spreads n_virtual grids over the cell
    records_per_grid: int = 20


def _default_mcbf_scenario() -> ScenarioConfig:
    return ScenarioConfig(
        area_width=300.0, area_height=300.0, grid_size=20.0,
        bs_positions=((0.0, 0.0), (300.0, 0.0), (150.0, 300.0)),
        n_tx=16, n_paths=4, n_ues=36, tx_power=1.0, noise_power=1e-13, rng_seed=2024)


def _default_mcbf_traffic() -> TrafficConfig:
    # two hotspots per cell, each just inside a cell border, so every cell
    # expects about a third of the users and leaks into a crowded neighbour
    return TrafficConfig(
        gmm_means=((130.0, 60.0), (170.0, 60.0), (70.0, 140.0), (85.0, 165.0),
                   (230.0, 140.0), (215.0, 165.0)),
        gmm_covs=(((400.0, 0.0), (0.0, 400.0)),) * 6,
        gmm_weights=(1 / 6,) * 6)


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=_default_mcbf_scenario)
    traffic: TrafficConfig = field(default_factory=_default_mcbf_traffic)
    measurement: MeasurementConfig = field(
        default_factory=lambda: MeasurementConfig(coverage_fraction=1.0))
    pem: PemConfig = field(default_factory=lambda: PemConfig(
        angle_oversampling=8, bandwidth=30.0, max_iters=1500))
    bf: BfConfig = field(default_factory=BfConfig)
    rxbeam: RxbeamConfig = field(default_factory=RxbeamConfig)
    gridize: GridizeConfig = field(default_factory=GridizeConfig)
    output_dir: str = "runs/default"

    @property
    def seed(self) -> int:
        return self.scenario.rng_seed


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _to_tuple(value):
    if isinstance(value, list):
        return tuple(_to_tuple(v) for v in value)
    return value


def _build(cls, data, base=None):
    """Instantiate ``cls`` from ``data`` overlaid on ``base`` (or class defaults)."""
    base = cls() if base is None else base
    if data is None:
        return base
    if not isinstance(data, dict):
        raise ConfigError(f"section for {cls.__name__} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        current = getattr(base, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, current)
        else:
            kwargs[name] = _to_tuple(value)
    try:
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def _require(ok, message):
    if not ok:
        raise ConfigError(message)


def _check_measurement(m: MeasurementConfig, where: str):
    _require(0 < m.coverage_fraction <= 1, f"{where}.coverage_fraction must lie in (0, 1]")
    _require(m.records_per_grid_mean > 0, f"{where}.records_per_grid_mean must be positive")
    _require(m.n_snapshots >= 1, f"{where}.n_snapshots must be >= 1")
    _require(m.meas_noise_std >= 0, f"{where}.meas_noise_std must be >= 0")
    _require(m.beams_per_antenna >= 1, f"{where}.beams_per_antenna must be >= 1")


def _check_traffic(t: TrafficConfig, where: str):
    _require(t.horizon_h > 0 and t.step_h > 0, f"{where}: horizon_h and step_h must be positive")
    try:
        t.ground_truth()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def validate_config(config: RunConfig) -> RunConfig:
    """Reject values that would only fail deep inside a run."""
    from .bf import SCHEMES

    _check_measurement(config.measurement, "measurement")
    _check_measurement(config.rxbeam.measurement, "rxbeam.measurement")
    _check_traffic(config.traffic, "traffic")
    _check_traffic(config.rxbeam.traffic, "rxbeam.traffic")
    p = config.pem
    _require(p.n_angles is None or p.n_angles >= 1, "pem.n_angles must be >= 1")
    _require(p.angle_oversampling >= 1, "pem.angle_oversampling must be >= 1")
    _require(p.lam_factor >= 0 and p.tol >= 0 and p.ridge_weight >= 0,
             "pem.lam_factor, tol and ridge_weight must be >= 0")
    _require(p.max_iters >= 1, "pem.max_iters must be >= 1")
    _require(p.bandwidth > 0, "pem.bandwidth must be positive")
    _require(p.harmonics >= 0, "pem.harmonics must be >= 0")
    _require(0 < p.interval_hours <= 24, "pem.interval_hours must lie in (0, 24]")
    b = config.bf
    _require(b.n_trials >= 1, "bf.n_trials must be >= 1")
    _require(len(b.n_tx_list) > 0 and min(b.n_tx_list) >= 1, "bf.n_tx_list needs sizes >= 1")
    _require(b.pilot_noise_var >= 0, "bf.pilot_noise_var must be >= 0")
    _require(b.wmmse_max_iters >= 1, "bf.wmmse_max_iters must be >= 1")
    unknown = [s for s in b.schemes if s not in SCHEMES]
    _require(not unknown, f"bf.schemes: unknown {unknown}")
    # the costliest pilot scheme trains every antenna of every cell
    worst = config.scenario.n_cells * max(b.n_tx_list)
    _require(b.n0 >= worst, f"bf.n0={b.n0} is smaller than the largest pilot overhead {worst}")
    r = config.rxbeam
    _require(len(r.d_list) > 0 and all(1 <= d <= r.scenario.n_tx for d in r.d_list),
             f"rxbeam.d_list entries must lie in [1, {r.scenario.n_tx}]")
    g = config.gridize
    _require(g.n_virtual >= 1 and g.max_iters >= 1 and g.records_per_grid >= 1,
             "gridize.n_virtual, max_iters and records_per_grid must be >= 1")
    _require(g.floor_db < 0, "gridize.floor_db must be negative")
    _require(0 <= g.cell < config.scenario.n_cells, f"gridize.cell {g.cell} does not exist")
    return config


def config_from_dict(data: dict | None) -> RunConfig:
    return validate_config(_build(RunConfig, data or {}))


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(config) -> dict:
    return _to_plain(config)


def dump_config(config, path):
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(config), fh, sort_keys=False)


def config_hash(config) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def with_seed(config: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return config
    seed = int(seed)
    rx = config.rxbeam
    rx = dataclasses.replace(rx, scenario=dataclasses.replace(rx.scenario, rng_seed=seed))
    scen = dataclasses.replace(config.scenario, rng_seed=seed)
    return dataclasses.replace(config, scenario=scen, rxbeam=rx)
