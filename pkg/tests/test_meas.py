import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pemsim.ckm import AngularGrid, build_beam_dictionary
from pemsim.env import PathProfile, ScenarioConfig, build_grid_map, generate_path_profiles, steering_vector
from pemsim.meas import (UNKNOWN, MrSampling, dft_codebook, expected_rsrp, generate_mr_dataset,
                         hide_locations, read_mr_csv, synthesize_rsrp, write_mr_csv)


def _profile(angles, powers):
    return PathProfile(np.asarray(angles, float), np.asarray(powers, float), np.zeros(len(angles)))


class TestCodebook:
    def test_two_beams_orthogonal(self):
        b = dft_codebook(2, 2).beams
        assert abs(np.vdot(b[0], b[1])) <= 1e-12

    def test_square_gram_identity(self):
        b = dft_codebook(4, 4).beams
        np.testing.assert_allclose(b.conj() @ b.T, np.eye(4), atol=1e-12)

    def test_oversampled(self):
        b = dft_codebook(4, 8).beams
        np.testing.assert_allclose(np.linalg.norm(b, axis=1), 1.0, atol=1e-12)
        overlap = np.abs(np.sum(b[:-1].conj() * b[1:], axis=1))
        assert np.all(overlap > 0)

    def test_bad_size(self):
        with pytest.raises(ValueError):
            dft_codebook(4, 0)

    @given(st.integers(1, 32), st.integers(1, 64))
    def test_unit_norm(self, n, m):
        np.testing.assert_allclose(np.linalg.norm(dft_codebook(n, m).beams, axis=1), 1.0, atol=1e-12)


class TestRsrp:
    def test_beam_aligned_path(self):
        n = 8
        cb = dft_codebook(n, n)
        u = -1 + (2 * 3 + 1) / n
        prof = _profile([np.arcsin(u)], [0.5])
        r = expected_rsrp(prof, cb)
        assert r[3] == pytest.approx(0.5 * n, rel=1e-12)
        a = steering_vector(np.arcsin(u), n)
        np.testing.assert_allclose(r, 0.5 * np.abs(cb.beams.conj() @ a) ** 2, atol=1e-14)
        np.testing.assert_allclose(np.delete(r, 3), 0.0, atol=1e-12)

    def test_zero_power(self):
        prof = _profile([0.2, -0.1], [0.0, 0.0])
        r = synthesize_rsrp(prof, dft_codebook(4, 8), 50, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(r, 0.0)

    def test_monte_carlo_expectation(self):
        prof = _profile([0.3, -0.5, 0.9, 0.0], [0.4, 0.3, 0.2, 0.1])
        cb = dft_codebook(16, 32)
        r = synthesize_rsrp(prof, cb, 10_000, 0.0, np.random.default_rng(2))
        e = expected_rsrp(prof, cb)
        assert np.max(np.abs(r - e) / e) <= 0.05

    def test_matches_dictionary_on_grid(self):
        ag = AngularGrid(64)
        cb = dft_codebook(16, 32)
        p = np.zeros(64)
        p[[5, 20, 41]] = [1.0, 0.5, 0.25]
        prof = _profile(ag.angles[[5, 20, 41]], [1.0, 0.5, 0.25])
        np.testing.assert_allclose(expected_rsrp(prof, cb), build_beam_dictionary(cb, ag) @ p,
                                   rtol=1e-10)

    def test_noise_clipped(self):
        prof = _profile([0.0], [1e-9])
        r = synthesize_rsrp(prof, dft_codebook(4, 4), 10, 1.0, np.random.default_rng(0))
        assert np.all(r >= 0)

    def test_bad_snapshots(self):
        with pytest.raises(ValueError):
            synthesize_rsrp(_profile([0.0], [1.0]), dft_codebook(2, 2), 0, 0.0,
                            np.random.default_rng(0))

    def test_converges_with_snapshots(self):
        prof = _profile([0.3, -0.5, 0.9], [0.5, 0.3, 0.2])
        cb = dft_codebook(8, 16)
        e = expected_rsrp(prof, cb)
        errs = []
        for n in (10, 100, 10_000):
            trials = [synthesize_rsrp(prof, cb, n, 0.0, np.random.default_rng(s)) for s in range(20)]
            errs.append(np.mean([np.linalg.norm(r - e) / np.linalg.norm(e) for r in trials]))
        assert errs[0] > errs[1] > errs[2]


class TestDataset:
    cfg = ScenarioConfig(150.0, 150.0, 10.0, n_tx=8)
    gm = build_grid_map(cfg)
    profiles = generate_path_profiles(cfg, gm, np.random.default_rng(0))
    cb = dft_codebook(8, 16)

    def test_full_coverage(self):
        recs = generate_mr_dataset(self.profiles, self.gm, self.cb,
                                   MrSampling(1.0, 1.0, 20), np.random.default_rng(1))
        assert {r.grid_id for r in recs} == set(range(self.gm.n_grids))
        assert all(r.rsrp.shape == (16,) and np.all(r.rsrp >= 0) for r in recs)

    def test_partial_coverage_binomial(self):
        recs = generate_mr_dataset(self.profiles, self.gm, self.cb,
                                   MrSampling(1.0, 0.6, 5), np.random.default_rng(2))
        covered = len({r.grid_id for r in recs})
        sd = np.sqrt(225 * 0.6 * 0.4)
        assert abs(covered - 135) <= 3 * sd

    def test_times_within_horizon(self):
        recs = generate_mr_dataset(self.profiles, self.gm, self.cb,
                                   MrSampling(2.0, 0.3, 5, horizon_h=48.0), np.random.default_rng(3))
        assert all(0 <= r.time < 48.0 for r in recs)

    def test_bad_coverage(self):
        with pytest.raises(ValueError):
            generate_mr_dataset(self.profiles, self.gm, self.cb, MrSampling(1.0, 0.0),
                                np.random.default_rng(0))

    def test_hide_and_roundtrip(self, tmp_path):
        recs = generate_mr_dataset(self.profiles, self.gm, self.cb,
                                   MrSampling(1.0, 0.2, 5), np.random.default_rng(4))
        hidden = hide_locations(recs)
        assert all(h.grid_id == UNKNOWN for h in hidden)
        assert recs[0].grid_id != UNKNOWN
        path = tmp_path / "mr.csv"
        write_mr_csv(path, recs, ["seed=4"])
        back = read_mr_csv(path)
        assert len(back) == len(recs)
        for a, b in zip(recs, back):
            assert (a.record_id, a.grid_id, a.cell_id, a.time) == (b.record_id, b.grid_id, b.cell_id, b.time)
            np.testing.assert_array_equal(a.rsrp, b.rsrp)

    @settings(max_examples=5, deadline=None)
    @given(st.integers(0, 2**31))
    def test_deterministic(self, seed):
        s = MrSampling(1.0, 0.2, 5)
        a = generate_mr_dataset(self.profiles, self.gm, self.cb, s, np.random.default_rng(seed))
        b = generate_mr_dataset(self.profiles, self.gm, self.cb, s, np.random.default_rng(seed))
        assert len(a) == len(b)
        assert all(np.array_equal(x.rsrp, y.rsrp) and x.time == y.time for x, y in zip(a, b))
