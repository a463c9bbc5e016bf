import csv
import math

import numpy as np
import pytest

from searchrec.catalog import (
    DEFAULT_SEGMENT_PROFILES,
    CatalogError,
    NormalizationSpec,
    VehicleCatalog,
    VehicleRecord,
    compute_margins,
    feature_matrix,
    load_catalog,
    normalize,
    save_catalog,
    synthetic_catalog,
)


def record(i, **kw):
    base = dict(
        vehicle_id=f"v{i}",
        body_style="sedan",
        transmission="automatic",
        drivetrain="fwd",
        num_accidents=0,
        num_owners=1,
        price=10_000.0,
        mileage=50_000.0,
        market_value=11_000.0,
    )
    base.update(kw)
    return VehicleRecord(**base)


def write_csv(path, rows):
    cols = [
        "vehicle_id", "body_style", "transmission", "drivetrain",
        "num_accidents", "num_owners", "price", "mileage", "market_value",
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        w.writerows(rows)


class TestLoadCatalog:
    def test_loads_valid_rows(self, tmp_path):
        path = tmp_path / "c.csv"
        write_csv(path, [
            ["a", "sedan", "automatic", "fwd", 0, 1, 9000, 42000, 9500],
            ["b", "suv", "cvt", "awd", 1, 2, 15000, 30000, 16000],
            ["c", "coupe", "manual", "rwd", 0, 0, 21000, 12000, 22000],
        ])
        cat = load_catalog(path)
        assert len(cat) == 3
        assert cat.vehicles[1].body_style == "suv"

    def test_zero_price_names_row(self, tmp_path):
        path = tmp_path / "c.csv"
        write_csv(path, [
            ["a", "sedan", "automatic", "fwd", 0, 1, 9000, 42000, 9500],
            ["b", "suv", "cvt", "awd", 1, 2, 0, 30000, 16000],
        ])
        with pytest.raises(CatalogError, match="row 1"):
            load_catalog(path)

    def test_unknown_level_rejected(self, tmp_path):
        path = tmp_path / "c.csv"
        write_csv(path, [["a", "spaceship", "automatic", "fwd", 0, 1, 1, 1, 1]])
        with pytest.raises(CatalogError, match="row 0"):
            load_catalog(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "c.csv"
        with open(path, "w") as fh:
            fh.write("vehicle_id,price\n")
        with pytest.raises(CatalogError, match="missing columns"):
            load_catalog(path)

    def test_column_mapping(self, tmp_path):
        path = tmp_path / "c.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "body_style", "transmission", "drivetrain",
                        "num_accidents", "num_owners", "price", "mileage",
                        "market_value"])
            w.writerow(["x1", "van", "cvt", "na", 0, 3, 8000, 90000, 8500])
        cat = load_catalog(path, schema={"vehicle_id": "id"})
        assert cat.vehicle_ids == ["x1"]

    def test_full_scale_synthetic_roundtrip(self, tmp_path):
        cat, planted = synthetic_catalog(seed=1)
        assert len(cat) == 4140
        path = tmp_path / "full.csv"
        save_catalog(cat, path)
        again = load_catalog(path)
        assert len(again) == 4140


class TestNormalize:
    def test_log_endpoints(self):
        cat = VehicleCatalog([
            record(0, price=math.e),
            record(1, price=math.e**2),
        ])
        nv = normalize(cat, NormalizationSpec(continuous=("price",)))
        vals = [v.feature_vector[-1] for v in nv]
        assert vals == [0.0, 1.0]

    def test_degenerate_feature_maps_to_half(self):
        cat = VehicleCatalog([record(i, price=5.0) for i in range(3)])
        nv = normalize(cat, NormalizationSpec(continuous=("price",)))
        assert all(v.feature_vector[-1] == 0.5 for v in nv)

    def test_one_hot_blocks_sum_to_weight(self):
        cat = VehicleCatalog([
            record(0, body_style="truck", transmission="manual", drivetrain="4wd"),
            record(1, num_accidents=2, num_owners=5),
        ])
        nv = normalize(cat)
        X = feature_matrix(nv)
        body, trans, drive = X[:, 0:8], X[:, 8:11], X[:, 11:16]
        acc, own = X[:, 16:18], X[:, 18:22]
        assert np.allclose(body.sum(axis=1), 1 / 8)
        assert np.allclose(trans.sum(axis=1), 1 / 3)
        assert np.allclose(drive.sum(axis=1), 1 / 5)
        assert np.allclose(acc.sum(axis=1), 1 / 2)
        assert np.allclose(own.sum(axis=1), 1 / 4)

    def test_continuous_in_unit_interval(self):
        cat, _ = synthetic_catalog(seed=2, scale=0.05)
        X = feature_matrix(normalize(cat))
        cont = X[:, -3:]
        assert cont.min() >= 0.0 and cont.max() <= 1.0

    def test_renormalization_is_identity(self):
        # round-trip through exp/log reproduces the normalized feature
        cat, _ = synthetic_catalog(seed=3, scale=0.05)
        nv = normalize(cat, NormalizationSpec(continuous=("price",)))
        vals = np.array([v.feature_vector[-1] for v in nv])
        lo, hi = (
            np.log([v.price for v in cat]).min(),
            np.log([v.price for v in cat]).max(),
        )
        prices = np.exp(lo + vals * (hi - lo))
        cat2 = VehicleCatalog(
            [record(i, price=float(p)) for i, p in enumerate(prices)]
        )
        nv2 = normalize(cat2, NormalizationSpec(continuous=("price",)))
        vals2 = np.array([v.feature_vector[-1] for v in nv2])
        assert np.abs(vals - vals2).max() < 1e-12

    def test_order_independence(self):
        cat, _ = synthetic_catalog(seed=4, scale=0.02)
        nv = normalize(cat)
        rev = VehicleCatalog(list(reversed(cat.vehicles)))
        nv_rev = normalize(rev)
        lookup = {v.vehicle_id: v.feature_vector for v in nv_rev}
        for v in nv:
            assert np.array_equal(v.feature_vector, lookup[v.vehicle_id])

    def test_empty_catalog_rejected(self):
        with pytest.raises(CatalogError):
            normalize(VehicleCatalog([]))

    def test_paper_scale_log_price_mean(self):
        cat, _ = synthetic_catalog(seed=5)
        nv = normalize(cat, NormalizationSpec(continuous=("price",)))
        mean = np.mean([v.feature_vector[-1] for v in nv])
        assert abs(mean - 0.43) < 0.03


class TestMargins:
    def test_margin_arithmetic(self):
        cat = VehicleCatalog([record(0, market_value=100.0)])
        rep = compute_margins(cat, rate=0.3, trim=(0, 100))
        assert rep.margins[0] == pytest.approx(30.0)

    def test_trim_flags_exactly_ten_of_hundred(self):
        cat = VehicleCatalog(
            [record(i, market_value=1000.0 + 10 * i) for i in range(100)]
        )
        rep = compute_margins(cat, rate=0.3, trim=(5, 95))
        assert rep.excluded.sum() == 10
        assert rep.excluded[:5].all() and rep.excluded[-5:].all()

    def test_invalid_rate(self):
        cat = VehicleCatalog([record(0)])
        with pytest.raises(ValueError):
            compute_margins(cat, rate=1.5)

    def test_cluster_margin_rank_order_matches_generator_targets(self):
        # independent oracle: recompute cluster means straight from the
        # raw market values, then compare orderings of well-separated
        # segment pairs against the generating profiles
        cat, planted = synthetic_catalog(seed=6)
        rep = compute_margins(cat, rate=0.3, trim=(5, 95))
        k = len(DEFAULT_SEGMENT_PROFILES)
        cluster_means = rep.cluster_margins(planted, k)
        raw = {c: [] for c in range(k)}
        for idx, v in enumerate(cat):
            if not rep.excluded[idx]:
                raw[planted[v.vehicle_id]].append(0.3 * v.market_value)
        oracle_means = np.array([np.mean(raw[c]) for c in range(k)])
        assert np.allclose(cluster_means, oracle_means, rtol=1e-12)
        targets = np.array([p.log_margin for p in DEFAULT_SEGMENT_PROFILES])
        for i in range(k):
            for j in range(k):
                if targets[i] - targets[j] >= 0.02:
                    assert cluster_means[i] > cluster_means[j]

    def test_excluded_vehicles_remain_clusterable(self):
        cat = VehicleCatalog(
            [record(i, market_value=1000.0 * (i + 1)) for i in range(20)]
        )
        rep = compute_margins(cat, trim=(10, 90))
        nv = normalize(cat)
        assert len(nv) == len(cat)
        assert rep.excluded.any()
