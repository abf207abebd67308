import json

import numpy as np
import numpy.testing as npt
import pytest

from gufu.data import (
    FingerprintDatabase,
    SignalBatch,
    align,
    denormalize_rss,
    load_batch,
    load_survey,
    normalize_rss,
    save_batch,
    save_survey,
)
from gufu.errors import ParseError, ValidationError


def make_db(rss, macs, locs=None):
    rss = np.asarray(rss, dtype=float)
    if locs is None:
        locs = np.column_stack([np.arange(rss.shape[0], dtype=float),
                                np.zeros(rss.shape[0])])
    bounds = (-1.0, -1.0, float(rss.shape[0]) + 1.0, 1.0)
    return FingerprintDatabase(locs, rss, macs, bounds)


class TestNormalization:
    def test_paper_rule_minus_60_maps_to_half(self):
        npt.assert_allclose(normalize_rss(np.array([[-60.0]])), [[0.5]])

    def test_bounds(self):
        out = normalize_rss(np.array([[-120.0, 0.0]]))
        npt.assert_array_equal(out, [[0.0, 1.0]])

    def test_undetected_is_exactly_zero(self):
        assert normalize_rss(np.array([[-120.0]]))[0, 0] == 0.0

    def test_out_of_range_names_position(self):
        with pytest.raises(ValidationError, match="row 1, col 0"):
            normalize_rss(np.array([[-5.0], [3.0]]))

    def test_denormalize_inverse_values(self):
        npt.assert_allclose(denormalize_rss(np.array([[0.5]])), [[-60.0]])
        npt.assert_allclose(denormalize_rss(np.array([[0.0]])), [[-120.0]])

    def test_round_trip_identity(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-120.0, 0.0, size=(20, 7))
        npt.assert_allclose(denormalize_rss(normalize_rss(x)), x, atol=1e-9)

    def test_denormalize_rejects_far_out_of_range(self):
        with pytest.raises(ValidationError):
            denormalize_rss(np.array([[1.5]]))
        # tolerance band is accepted and clamped
        npt.assert_allclose(denormalize_rss(np.array([[1.0 + 1e-10]])), [[0.0]])


class TestAlign:
    def test_identical_mac_lists(self):
        db = make_db([[-50.0, -60.0]], ["a", "b"])
        batch = SignalBatch(np.array([[-55.0, -65.0]]), ["a", "b"])
        out = align(db, batch)
        assert out.shared == [(0, 0), (1, 1)]
        assert out.new_aps == [] and out.missing_aps == []

    def test_disjoint(self):
        db = make_db([[-50.0]], ["a"])
        batch = SignalBatch(np.array([[-55.0]]), ["z"])
        out = align(db, batch)
        assert out.shared == [] and out.new_aps == [0] and out.missing_aps == [0]

    def test_partial_overlap(self):
        db = make_db([[-50.0, -60.0, -70.0]], ["a", "b", "c"])
        batch = SignalBatch(np.array([[-1.0, -2.0, -3.0]]), ["b", "c", "d"])
        out = align(db, batch)
        assert {(db_c, b_c) for db_c, b_c in out.shared} == {(1, 0), (2, 1)}
        assert out.new_aps == [2]
        assert out.missing_aps == [0]

    def test_swap_symmetry(self):
        db = make_db([[-50.0, -60.0]], ["a", "b"])
        other = make_db([[-30.0, -40.0]], ["b", "c"])
        fwd = align(db, SignalBatch(other.rss, other.macs))
        rev = align(other, SignalBatch(db.rss, db.macs))
        assert {db.macs[i] for i in fwd.missing_aps} == \
               {db.macs[j] for j in rev.new_aps}
        assert {other.macs[j] for j in fwd.new_aps} == \
               {other.macs[i] for i in rev.missing_aps}


class TestJsonl:
    def test_survey_record_shape(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text('{"loc":[1.0,2.0],"rss":{"aa:bb:cc:dd:ee:01":-60.0}}\n')
        db = load_survey(p)
        assert db.n_samples == 1
        assert db.macs == ["aa:bb:cc:dd:ee:01"]
        npt.assert_array_equal(db.locations, [[1.0, 2.0]])
        npt.assert_array_equal(db.rss, [[-60.0]])

    def test_missing_loc_is_parse_error(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text('{"rss":{"aa":-60.0}}\n')
        with pytest.raises(ParseError, match="line 1"):
            load_survey(p)

    def test_bad_json_names_line(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text('{"loc":[0,0],"rss":{"aa":-60.0}}\n{nope}\n')
        with pytest.raises(ParseError, match="line 2"):
            load_survey(p)

    def test_random_round_trip(self, tmp_path):
        rng = np.random.default_rng(42)
        n, m = 100, 9
        macs = [f"aa:bb:cc:dd:ee:{k:02x}" for k in range(m)]
        rss = rng.uniform(-119.0, -30.0, size=(n, m))
        rss[rng.random((n, m)) < 0.3] = -120.0
        locs = rng.uniform(0.0, 50.0, size=(n, 2))
        db = FingerprintDatabase(locs, rss, macs, (0.0, 0.0, 50.0, 50.0))
        save_survey(db, tmp_path / "db.jsonl")
        loaded = load_survey(tmp_path / "db.jsonl", site_bounds=db.site_bounds)
        assert loaded.macs == sorted(set(macs))
        npt.assert_array_equal(loaded.locations, db.locations)
        npt.assert_array_equal(loaded.rss, db.rss)

    def test_batch_round_trip_and_macs_sorted(self, tmp_path):
        batch = SignalBatch(np.array([[-40.0, -120.0], [-120.0, -80.0]]), ["b", "a"])
        save_batch(batch, tmp_path / "b.jsonl")
        loaded = load_batch(tmp_path / "b.jsonl")
        assert loaded.macs == ["a", "b"]
        npt.assert_array_equal(loaded.rss, [[-120.0, -40.0], [-80.0, -120.0]])

    def test_below_floor_clamped_with_warning(self, tmp_path, caplog):
        p = tmp_path / "b.jsonl"
        p.write_text('{"rss":{"aa":-125.0}}\n')
        with caplog.at_level("WARNING"):
            batch = load_batch(p)
        assert "clamping" in caplog.text
        # -125 clamps to the undetected marker, so the MAC set is empty
        assert batch.macs == ["aa"] or batch.macs == []

    def test_macs_stored_lowercase(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text('{"loc":[0.0,0.0],"rss":{"AA:BB:CC:DD:EE:01":-60.0}}\n')
        db = load_survey(p)
        assert db.macs == ["aa:bb:cc:dd:ee:01"]

    def test_positive_rss_rejected(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text('{"loc":[0.0,0.0],"rss":{"aa":5.0}}\n')
        with pytest.raises(ParseError):
            load_survey(p)


class TestInvariants:
    def test_duplicate_macs_rejected(self):
        with pytest.raises(ValidationError):
            make_db([[-50.0, -60.0]], ["a", "a"])

    def test_location_outside_bounds_rejected(self):
        with pytest.raises(ValidationError):
            FingerprintDatabase(np.array([[100.0, 0.0]]), np.array([[-50.0]]),
                                ["a"], (0.0, 0.0, 10.0, 10.0))
