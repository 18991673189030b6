"""Synthetic corpus generator: determinism, shape, uniformity, round-trips."""

import numpy as np
import pytest
from scipy import stats

from poirec.ingest import DataError, load_checkins, prepare_dataset
from poirec.synth import SynthConfig, generate_rows, generate_synthetic


def base_config(**overrides):
    cfg = dict(users=20, pois=8, categories=3, traj_per_user=4, len_min=5, len_max=5,
               coupling_category=0.0, coupling_distance=0.0, coupling_hour=0.0)
    cfg.update(overrides)
    return SynthConfig(**cfg)


class TestDeterminismAndShape:
    def test_same_seed_byte_identical_files(self, tmp_path):
        cfg = base_config()
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        generate_synthetic(cfg, 7, p1)
        generate_synthetic(cfg, 7, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_different_seed_differs(self, tmp_path):
        cfg = base_config()
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        generate_synthetic(cfg, 7, p1)
        generate_synthetic(cfg, 8, p2)
        assert p1.read_bytes() != p2.read_bytes()

    def test_row_count_is_users_times_trajs_times_length(self, tmp_path):
        rows = generate_synthetic(base_config(), 0, tmp_path / "c.csv")
        assert rows == 20 * 4 * 5
        assert len((tmp_path / "c.csv").read_text().splitlines()) == 401  # header + rows


class TestRoundTrip:
    def test_load_checkins_recovers_generated_records(self, tmp_path):
        cfg = base_config(users=5, traj_per_user=3)
        rows = generate_rows(cfg, 3)
        path = tmp_path / "d.csv"
        generate_synthetic(cfg, 3, path)
        records = load_checkins(path, tz_hours=0.0)
        assert len(records) == len(rows)
        for rec, (user, poi, cat, lat, lon, ts) in zip(records, rows):
            assert (rec.user_id, rec.poi_id, rec.category_id) == (user, poi, cat)
            assert rec.lat == lat and rec.lon == lon  # micro-degree grid is lossless
            assert rec.timestamp == ts

    def test_survives_default_filtering_at_scale(self, tmp_path):
        cfg = base_config(users=40, pois=10, traj_per_user=6, len_min=3, len_max=5)
        path = tmp_path / "e.csv"
        generate_synthetic(cfg, 1, path)
        dataset = prepare_dataset(load_checkins(path))
        assert dataset.stats["users"] >= 35
        assert dataset.stats["pois"] >= 8


class TestCouplingZeroIsUniform:
    def test_next_poi_frequencies_pass_chi_square(self, tmp_path):
        cfg = base_config(users=40, pois=8, traj_per_user=5, len_min=4, len_max=4)
        rows = generate_rows(cfg, 123)
        # transitions: consecutive rows within each (user, day) trajectory
        counts = np.zeros(cfg.pois)
        for prev, cur in zip(rows, rows[1:]):
            same_traj = prev[0] == cur[0] and prev[5] // 86400 == cur[5] // 86400
            if same_traj:
                counts[int(cur[1][1:])] += 1
        n = counts.sum()
        assert n == 40 * 5 * 3
        expected = n / cfg.pois
        chi2 = ((counts - expected) ** 2 / expected).sum()
        assert chi2 < stats.chi2.ppf(0.999, df=cfg.pois - 1)


class TestCouplingBiasesTransitions:
    def test_high_category_coupling_prefers_next_category(self):
        cfg = base_config(users=40, pois=12, categories=3, traj_per_user=5,
                          len_min=4, len_max=4, coupling_category=6.0)
        rows = generate_rows(cfg, 5)
        cat_of = {}
        for r in rows:
            cat_of[r[1]] = int(r[2][1:])
        hits = total = 0
        for prev, cur in zip(rows, rows[1:]):
            if prev[0] == cur[0] and prev[5] // 86400 == cur[5] // 86400:
                total += 1
                hits += cat_of[cur[1]] == (cat_of[prev[1]] + 1) % cfg.categories
        assert hits / total > 0.7  # far above the ~1/3 uniform baseline


class TestInfeasibleSpecs:
    @pytest.mark.parametrize("overrides", [
        dict(pois=0), dict(users=0), dict(categories=0),
        dict(len_min=0), dict(len_min=6, len_max=5), dict(len_max=20),
        dict(coupling_distance=-1.0),
    ])
    def test_validation_raises(self, overrides, tmp_path):
        with pytest.raises(DataError, match="infeasible"):
            generate_synthetic(base_config(**overrides), 0, tmp_path / "x.csv")
