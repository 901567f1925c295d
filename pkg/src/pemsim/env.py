"""Synthetic physical world: geometry, grids, multipath channels and traffic.

Everything random here draws from an explicit ``numpy.random.Generator`` so
that two runs with the same seed produce bit-identical scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299792458.0

# Angles must stay strictly inside (-pi/2, pi/2).
_ANGLE_EPS = 1e-9
_HALF_PI = np.pi / 2


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry, array and link-budget parameters of one scenario.

    ``bs_boresights`` gives the broadside direction of each base station's
    linear array (radians, counter-clockwise from +x). When omitted each
    array faces the centre of the area.
    """

    area_width: float = 150.0
    area_height: float = 150.0
    grid_size: float = 10.0
    bs_positions: tuple = ((0.0, 0.0),)
    n_tx: int = 16
    n_paths: int = 4
    n_ues: int = 36
    tx_power: float = 1.0
    noise_power: float = 1e-13
    pathloss_exponent: float = 3.0
    pathloss_ref_db: float = 30.0
    rng_seed: int = 0
    bs_boresights: tuple | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "bs_positions",
            tuple((float(x), float(y)) for x, y in self.bs_positions))
        if self.bs_boresights is not None:
            object.__setattr__(self, "bs_boresights",
                               tuple(float(b) for b in self.bs_boresights))
        self.validate()

    def validate(self):
        if self.grid_size <= 0:
            raise ValueError("grid_size must be positive")
        for name in ("area_width", "area_height"):
            value = getattr(self, name)
            ratio = value / self.grid_size
            if value <= 0 or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"{name} must be a positive multiple of grid_size")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.n_tx < 1:
            raise ValueError("n_tx must be >= 1")
        if self.n_ues < 0:
            raise ValueError("n_ues must be >= 0")
        if self.tx_power <= 0 or self.noise_power <= 0:
            raise ValueError("tx_power and noise_power must be positive")
        if len(self.bs_positions) == 0:
            raise ValueError("at least one base station is required")
        if self.bs_boresights is not None and len(self.bs_boresights) != len(self.bs_positions):
            raise ValueError("bs_boresights must match bs_positions in length")

    @property
    def n_cells(self) -> int:
        return len(self.bs_positions)

    def boresights(self) -> np.ndarray:
        if self.bs_boresights is not None:
            return np.asarray(self.bs_boresights, dtype=float)
        centre = np.array([self.area_width / 2, self.area_height / 2])
        bs = np.asarray(self.bs_positions, dtype=float)
        delta = centre - bs
        return np.arctan2(delta[:, 1], delta[:, 0])


@dataclass(frozen=True)
class GridMap:
    n_x: int
    n_y: int
    grid_size: float
    centers: np.ndarray  # (n_grids, 2), row-major over y then x
    cell_of_grid: np.ndarray  # (n_grids,)

    @property
    def n_grids(self) -> int:
        return self.n_x * self.n_y

    def grids_of_cell(self, cell: int) -> np.ndarray:
        return np.flatnonzero(self.cell_of_grid == cell)

    def grid_of_position(self, xy) -> int:
        ix = min(int(xy[0] // self.grid_size), self.n_x - 1)
        iy = min(int(xy[1] // self.grid_size), self.n_y - 1)
        return iy * self.n_x + ix


@dataclass(frozen=True)
class PathProfile:
    """Ground-truth large-scale channel of one (cell, grid) link."""

    angles: np.ndarray
    powers: np.ndarray
    delays: np.ndarray

    @property
    def n_paths(self) -> int:
        return len(self.angles)

    @property
    def total_power(self) -> float:
        return float(np.sum(self.powers))


@dataclass(frozen=True)
class TrafficGroundTruth:
    """Gaussian-mixture spatial demand modulated by a rectified daily cycle."""

    gmm_means: np.ndarray
    gmm_covs: np.ndarray
    gmm_weights: np.ndarray
    base: float = 1000.0
    peak: float = 3000.0
    period: float = 24.0
    noise_std: float = 0.0

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.gmm_means, dtype=float))
        covs = np.asarray(self.gmm_covs, dtype=float).reshape(-1, 2, 2)
        weights = np.asarray(self.gmm_weights, dtype=float)
        if not (len(means) == len(covs) == len(weights)):
            raise ValueError("GMM means, covariances and weights must align")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("GMM weights must be a probability simplex")
        for cov in covs:
            if not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
                raise ValueError("GMM covariances must be symmetric positive definite")
        object.__setattr__(self, "gmm_means", means)
        object.__setattr__(self, "gmm_covs", covs)
        object.__setattr__(self, "gmm_weights", weights)

    def amplitude(self, t):
        return self.base + self.peak * np.maximum(0.0, np.sin(2 * np.pi * np.asarray(t) / self.period))

    def density(self, points) -> np.ndarray:
        """Mixture density at each of ``points`` (shape (..., 2)), per m^2."""
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for mu, cov, w in zip(self.gmm_means, self.gmm_covs, self.gmm_weights):
            inv = np.linalg.inv(cov)
            diff = pts - mu
            mahal = np.einsum("...i,ij,...j->...", diff, inv, diff)
            norm = 2 * np.pi * np.sqrt(np.linalg.det(cov))
            out = out + w * np.exp(-0.5 * mahal) / norm
        return out


def steering_vector(theta: float, n_tx: int) -> np.ndarray:
    """Half-wavelength ULA response ``exp(1j*pi*m*sin(theta))``, m = 0..n_tx-1."""
    theta = float(theta)
    if not (-_HALF_PI < theta < _HALF_PI):
        raise ValueError(f"theta={theta} outside the open interval (-pi/2, pi/2)")
    if n_tx < 1:
        raise ValueError("n_tx must be >= 1")
    return np.exp(1j * np.pi * np.arange(n_tx) * np.sin(theta))


def steering_matrix(angles, n_tx: int) -> np.ndarray:
    """Columns are steering vectors for ``angles``; shape (n_tx, len(angles))."""
    angles = np.asarray(angles, dtype=float)
    if np.any(np.abs(angles) >= _HALF_PI):
        raise ValueError("angles must lie in the open interval (-pi/2, pi/2)")
    return np.exp(1j * np.pi * np.outer(np.arange(n_tx), np.sin(angles)))


def build_grid_map(config: ScenarioConfig) -> GridMap:
    n_x = int(round(config.area_width / config.grid_size))
    n_y = int(round(config.area_height / config.grid_size))
    xs = (np.arange(n_x) + 0.5) * config.grid_size
    ys = (np.arange(n_y) + 0.5) * config.grid_size
    gx, gy = np.meshgrid(xs, ys)
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    bs = np.asarray(config.bs_positions, dtype=float)
    dist = np.linalg.norm(centers[:, None, :] - bs[None, :, :], axis=-1)
    # argmin returns the first index on ties, i.e. the lowest BS index
    cell_of_grid = np.argmin(dist, axis=1)
    return GridMap(n_x=n_x, n_y=n_y, grid_size=float(config.grid_size),
                   centers=centers, cell_of_grid=cell_of_grid)


def pathloss_gain(distance, config: ScenarioConfig):
    d = np.maximum(np.asarray(distance, dtype=float), 1.0)
    loss_db = config.pathloss_ref_db + 10 * config.pathloss_exponent * np.log10(d)
    return 10 ** (-loss_db / 10)


def los_angle(bs_xy, boresight: float, point_xy) -> float:
    """Bearing from a BS to a point relative to array broadside.

    A ULA cannot tell front from back, so bearings behind the array fold
    onto the front half-plane through ``arcsin(sin(.))``.
    """
    delta = np.asarray(point_xy, dtype=float) - np.asarray(bs_xy, dtype=float)
    rel = np.arctan2(delta[1], delta[0]) - boresight
    theta = np.arcsin(np.sin(rel))
    return float(np.clip(theta, -_HALF_PI + _ANGLE_EPS, _HALF_PI - _ANGLE_EPS))


def generate_path_profiles(config: ScenarioConfig, grid_map: GridMap,
                           rng: np.random.Generator) -> list[list[PathProfile]]:
    """Ground-truth path profiles indexed ``profiles[cell][grid]``."""
    n_cells, n_grids, n_p = config.n_cells, grid_map.n_grids, config.n_paths
    bs = np.asarray(config.bs_positions, dtype=float)
    boresights = config.boresights()

    angles = rng.uniform(-_HALF_PI, _HALF_PI, size=(n_cells, n_grids, n_p))
    angles = np.clip(angles, -_HALF_PI + _ANGLE_EPS, _HALF_PI - _ANGLE_EPS)
    fractions = rng.dirichlet(np.ones(n_p), size=(n_cells, n_grids))
    excess = rng.uniform(0.0, 1e-6, size=(n_cells, n_grids, n_p))

    profiles = []
    for c in range(n_cells):
        row = []
        for g in range(n_grids):
            center = grid_map.centers[g]
            d = max(float(np.linalg.norm(center - bs[c])), 1.0)
            ang = angles[c, g].copy()
            ang[0] = los_angle(bs[c], boresights[c], center)
            powers = fractions[c, g] * pathloss_gain(d, config)
            delays = d / SPEED_OF_LIGHT + excess[c, g]
            delays[0] = d / SPEED_OF_LIGHT
            row.append(PathProfile(angles=ang, powers=powers, delays=delays))
        profiles.append(row)
    return profiles


def realize_channel(profile: PathProfile, n_tx: int, rng: np.random.Generator,
                    size: int | None = None) -> np.ndarray:
    """Small-scale realization(s) of a link with i.i.d. uniform path phases.

    Returns shape (n_tx,) or, with ``size``, (size, n_tx).
    """
    A = steering_matrix(profile.angles, n_tx)  # (n_tx, n_p)
    amp = np.sqrt(profile.powers)
    shape = (profile.n_paths,) if size is None else (size, profile.n_paths)
    phases = rng.uniform(0.0, 2 * np.pi, size=shape)
    gains = amp * np.exp(1j * phases)
    return gains @ A.T


def path_covariance(profile: PathProfile, n_tx: int) -> np.ndarray:
    """Closed form E[h h^H] = sum_p beta_p a(theta_p) a(theta_p)^H."""
    A = steering_matrix(profile.angles, n_tx)
    return (A * profile.powers) @ A.conj().T


def traffic_volume(tg: TrafficGroundTruth, grid_center, t: float,
                   rng: np.random.Generator | None = None):
    """Traffic volume at one grid centre (or an array of them) at hour ``t``."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be non-negative")
    mean = tg.amplitude(t) * tg.density(grid_center)
    if tg.noise_std > 0:
        if rng is None:
            raise ValueError("rng required when noise_std > 0")
        mean = mean + rng.normal(0.0, tg.noise_std, size=np.shape(mean))
    return np.maximum(mean, 0.0)


def true_occurrence(tg: TrafficGroundTruth, grid_map: GridMap, t: float) -> np.ndarray:
    """Noise-free per-grid demand normalized to a simplex."""
    vol = tg.amplitude(t) * tg.density(grid_map.centers)
    return vol / vol.sum()


def place_active_users(occurrence: Sequence[float], n_ues: int,
                       rng: np.random.Generator, grid_map: GridMap):
    """Sample ``n_ues`` (grid id, position) pairs from per-grid weights."""
    q = np.asarray(occurrence, dtype=float)
    if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("occurrence weights must be non-negative and sum to 1")
    if len(q) != grid_map.n_grids:
        raise ValueError("occurrence length must equal the grid count")
    grids = rng.choice(len(q), size=n_ues, p=q / q.sum())
    offsets = rng.uniform(-0.5, 0.5, size=(n_ues, 2)) * grid_map.grid_size
    positions = grid_map.centers[grids] + offsets
    return [(int(g), positions[i]) for i, g in enumerate(grids)]


@dataclass
class Scenario:
    """Bundle of generated world state for convenience."""

    config: ScenarioConfig
    grid_map: GridMap
    profiles: list = field(repr=False)


def make_scenario(config: ScenarioConfig, rng: np.random.Generator | None = None) -> Scenario:
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    grid_map = build_grid_map(config)
    return Scenario(config, grid_map, generate_path_profiles(config, grid_map, rng))
