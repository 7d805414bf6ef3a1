import math

import numpy as np
import pytest

from distatlas import distgen
from distatlas.cdfcodec import GridShape
from distatlas.distgen import (
    FAMILIES,
    FAMILY_NAMES,
    N_FAMILIES,
    DistSpec,
    InvalidFamilyError,
    InvalidParameterError,
    build_doe,
    draw_params,
    draw_spec,
    load_cache,
    mix64,
    parse_dataset_spec,
    sample_variable,
    save_cache,
)

# critical K-S value at alpha = 0.001: sqrt(-ln(alpha/2) / 2) / sqrt(n)
KS_ALPHA_001 = math.sqrt(-math.log(0.0005) / 2.0)


def ks_statistic(values, cdf):
    """One-sample K-S distance against a theoretical CDF, computed inline."""
    x = np.sort(values)
    n = x.shape[0]
    f = cdf(x)
    steps = np.arange(1, n + 1) / n
    return max(np.max(steps - f), np.max(f - (steps - 1.0 / n)))


def make_series(family_id, params, n, seed):
    """Draw directly from the family sampler; n may exceed the spec cap."""
    rng = np.random.default_rng(seed)
    return FAMILIES[family_id].sample(rng, params, n)


class TestMix64:
    def test_deterministic(self):
        assert mix64(1, 2, 3) == mix64(1, 2, 3)

    def test_distinct_inputs_rarely_collide(self):
        seen = {mix64(s, f, i, t) for s in range(3) for f in range(13)
                for i in range(20) for t in range(2)}
        assert len(seen) == 3 * 13 * 20 * 2

    def test_zero_is_not_fixed_point(self):
        assert mix64(0) != 0


class TestDrawParams:
    def test_unknown_family(self):
        with pytest.raises(InvalidFamilyError):
            draw_params(13, np.random.default_rng(0))

    def test_normal_is_fixed(self):
        for seed in range(20):
            assert draw_params(5, np.random.default_rng(seed)) == {"loc": 0.0, "scale": 1.0}

    def test_bernoulli_range(self):
        for seed in range(200):
            p = draw_params(10, np.random.default_rng(seed))["p"]
            assert 0.001 <= p <= 0.999

    def test_chi_df_values(self):
        dfs = {draw_params(9, np.random.default_rng(seed))["df"] for seed in range(500)}
        assert dfs == set(range(1, 10))

    def test_all_families_validate(self):
        for fid in range(N_FAMILIES):
            for seed in range(50):
                params = draw_params(fid, np.random.default_rng(seed))
                distgen.validate_params(fid, params)  # must not raise

    def test_supnormal_ranges(self):
        for seed in range(100):
            p = draw_params(7, np.random.default_rng(seed))
            assert p["loc1"] == 0.0 and p["scale1"] == 1.0
            assert 0.0 <= p["loc2"] <= 1.0
            assert 0.1 <= p["scale2"] <= 9.0
            assert 0.1 <= p["w"] <= 0.9


class TestSpecValidation:
    def test_bad_sample_size(self):
        with pytest.raises(InvalidParameterError):
            DistSpec(family_id=5, params={"loc": 0.0, "scale": 1.0}, sample_size=10)

    def test_bad_params(self):
        with pytest.raises(InvalidParameterError):
            DistSpec(family_id=0, params={"alpha": 50.0, "beta": 1.0}, sample_size=100)

    def test_family_name(self):
        spec = DistSpec(family_id=9, params={"df": 3}, sample_size=50)
        assert spec.family_name == "chi"


class TestSamplerDeterminism:
    @pytest.mark.parametrize("fid", range(N_FAMILIES))
    def test_same_spec_same_seed(self, fid):
        spec = draw_spec(fid, np.random.default_rng(99))
        a = sample_variable(spec, 1234).values
        b = sample_variable(spec, 1234).values
        np.testing.assert_array_equal(a, b)
        assert a.shape[0] == spec.sample_size

    def test_different_seed_differs(self):
        spec = DistSpec(family_id=5, params={"loc": 0.0, "scale": 1.0}, sample_size=100)
        a = sample_variable(spec, 1).values
        b = sample_variable(spec, 2).values
        assert not np.array_equal(a, b)


class TestSamplerDomains:
    def test_beta_open_unit_interval(self):
        for alpha, beta in [(0.1, 0.1), (9.0, 0.1), (0.1, 9.0), (2.0, 5.0)]:
            v = make_series(0, {"alpha": alpha, "beta": beta}, 1000, seed=42)
            assert np.all(v > 0.0) and np.all(v < 1.0)

    def test_bernoulli_binary(self):
        v = make_series(10, {"p": 0.4}, 1000, seed=7)
        assert set(np.unique(v)) <= {0.0, 1.0}

    def test_uniform_support(self):
        v = make_series(6, {"loc": 0.0, "scale": 1.0}, 1000, seed=7)
        assert np.all(v >= 0.0) and np.all(v <= 1.0)

    def test_nonnegative_families(self):
        assert np.all(make_series(2, {"loc": 0.0, "scale": 1.0}, 1000, 3) >= 0.0)
        assert np.all(make_series(8, {"alpha": 0.5}, 1000, 3) >= 0.0)
        assert np.all(make_series(9, {"df": 1}, 1000, 3) >= 0.0)
        assert np.all(make_series(3, {"alpha": 0.2}, 1000, 3) > 0.0)
        assert np.all(make_series(4, {"s": 2.0}, 1000, 3) > 0.0)

    def test_all_samplers_finite(self):
        for fid in range(N_FAMILIES):
            spec = draw_spec(fid, np.random.default_rng(fid))
            assert np.all(np.isfinite(sample_variable(spec, 55).values))


class TestSamplerGoodnessOfFit:
    """K-S tests at alpha = 0.001 against closed-form CDFs, n = 10000."""

    N = 10000
    CRIT = KS_ALPHA_001 / math.sqrt(10000)

    def check(self, family_id, params, cdf, seed=101):
        values = make_series(family_id, params, self.N, seed)
        assert ks_statistic(values, cdf) < self.CRIT

    def test_uniform(self):
        self.check(6, {"loc": 0.0, "scale": 1.0}, lambda x: np.clip(x, 0, 1))

    def test_exponential(self):
        self.check(2, {"loc": 0.0, "scale": 1.0}, lambda x: 1.0 - np.exp(-x))

    def test_cauchy(self):
        self.check(1, {"loc": 0.0, "scale": 1.0}, lambda x: 0.5 + np.arctan(x) / np.pi)

    def test_normal(self):
        from math import erf
        self.check(5, {"loc": 0.0, "scale": 1.0},
                   lambda x: 0.5 * (1.0 + np.vectorize(erf)(x / math.sqrt(2))))

    def test_weibull(self):
        for alpha in (0.5, 1.0, 4.0):
            self.check(8, {"alpha": alpha}, lambda x, a=alpha: 1.0 - np.exp(-x ** a))

    def test_gumbel_r(self):
        self.check(12, {"loc": 0.0, "scale": 1.0}, lambda x: np.exp(-np.exp(-x)))

    def test_gumbel_l(self):
        self.check(11, {"loc": 0.0, "scale": 1.0}, lambda x: 1.0 - np.exp(-np.exp(x)))

    def test_gamma(self):
        from scipy.special import gammainc
        for alpha in (0.3, 1.0, 2.5, 8.0):
            self.check(3, {"alpha": alpha}, lambda x, a=alpha: gammainc(a, x))

    def test_beta(self):
        from scipy.special import betainc
        for a, b in [(0.2, 0.7), (2.0, 5.0), (8.0, 8.0)]:
            self.check(0, {"alpha": a, "beta": b},
                       lambda x, a=a, b=b: betainc(a, b, np.clip(x, 0, 1)))

    def test_chi(self):
        from scipy.special import gammainc
        for df in (1, 3, 9):
            self.check(9, {"df": df}, lambda x, d=df: gammainc(d / 2.0, x * x / 2.0))

    def test_lognormal(self):
        from math import erf
        s = 0.5
        self.check(4, {"s": s},
                   lambda x: 0.5 * (1.0 + np.vectorize(erf)(np.log(x) / (s * math.sqrt(2)))))


class TestSamplerMoments:
    """CLT bands around known means (about 4.7 sigma at n = 1000)."""

    def test_exponential_mean(self):
        v = make_series(2, {"loc": 0.0, "scale": 1.0}, 1000, seed=5)
        assert 0.85 <= v.mean() <= 1.15

    def test_bernoulli_high_p(self):
        v = make_series(10, {"p": 0.999}, 1000, seed=5)
        assert 0.97 <= v.mean() <= 1.0

    def test_gamma_mean_var(self):
        for alpha in (0.5, 3.0):
            v = make_series(3, {"alpha": alpha}, 100000, seed=8)
            assert abs(v.mean() - alpha) < 5 * math.sqrt(alpha / 100000)
            assert abs(v.var() - alpha) < 0.1 * alpha

    def test_beta_mean(self):
        a, b = 2.0, 5.0
        v = make_series(0, {"alpha": a, "beta": b}, 100000, seed=8)
        expected = a / (a + b)
        sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
        assert abs(v.mean() - expected) < 5 * sd / math.sqrt(100000)

    def test_chi_mean(self):
        for df in (1, 4, 9):
            v = make_series(9, {"df": df}, 100000, seed=8)
            expected = math.sqrt(2) * math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2))
            assert abs(v.mean() - expected) < 0.02

    def test_supnormal_mean(self):
        params = {"loc1": 0.0, "scale1": 1.0, "loc2": 0.8, "scale2": 2.0, "w": 0.3}
        v = make_series(7, params, 100000, seed=8)
        expected = 0.3 * 0.0 + 0.7 * 0.8
        assert abs(v.mean() - expected) < 0.05


class TestBuildDoe:
    def test_counts_per_family(self):
        ds = build_doe(2, master_seed=1)
        assert len(ds) == 2 * N_FAMILIES
        assert np.all(np.bincount(ds.labels, minlength=N_FAMILIES) == 2)

    def test_single_per_family(self):
        ds = build_doe(1, master_seed=1)
        assert len(ds) == N_FAMILIES
        assert sorted(ds.labels.tolist()) == list(range(N_FAMILIES))

    def test_deterministic(self):
        a = build_doe(3, master_seed=7)
        b = build_doe(3, master_seed=7)
        np.testing.assert_array_equal(a.grids, b.grids)
        np.testing.assert_array_equal(a.entropy, b.entropy)

    def test_seed_changes_output(self):
        a = build_doe(2, master_seed=1)
        b = build_doe(2, master_seed=2)
        assert not np.array_equal(a.grids, b.grids)

    def test_sample_sizes_in_range(self):
        ds = build_doe(5, master_seed=3)
        assert ds.sample_sizes.min() >= 35 and ds.sample_sizes.max() <= 1000

    def test_grids_normalized(self):
        ds = build_doe(2, master_seed=3)
        assert ds.grids.min() >= 0.0 and ds.grids.max() <= 1.0
        assert np.all(ds.grids.max(axis=1) == 1.0)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            build_doe(0)

    def test_custom_grid(self):
        ds = build_doe(1, GridShape(16, 15), master_seed=1)
        assert ds.grids.shape == (N_FAMILIES, 240)


class TestCache:
    def test_round_trip(self, tmp_path):
        ds = build_doe(4, master_seed=9)
        path = tmp_path / "corpus.bin"
        save_cache(ds, path)
        loaded = load_cache(path)
        assert loaded.grid_shape == ds.grid_shape
        assert loaded.master_seed == ds.master_seed
        assert loaded.per_family_count == ds.per_family_count
        np.testing.assert_array_equal(loaded.grids, ds.grids)
        np.testing.assert_array_equal(loaded.labels, ds.labels)
        np.testing.assert_array_equal(loaded.entropy, ds.entropy)
        np.testing.assert_array_equal(loaded.sample_sizes, ds.sample_sizes)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a cache at all, far too short to matter")
        with pytest.raises(ValueError):
            load_cache(path)

    def test_truncated(self, tmp_path):
        ds = build_doe(2, master_seed=9)
        path = tmp_path / "corpus.bin"
        save_cache(ds, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(ValueError):
            load_cache(path)


class TestDatasetSpec:
    def test_parse(self):
        seed, count, grid = parse_dataset_spec(
            {"master_seed": 5, "per_family_count": 10, "grid": {"x_bins": 16, "y_levels": 15}})
        assert (seed, count, grid.x_bins, grid.y_levels) == (5, 10, 16, 15)

    def test_defaults_grid(self):
        _, _, grid = parse_dataset_spec({"master_seed": 0, "per_family_count": 1})
        assert (grid.x_bins, grid.y_levels) == (26, 25)

    @pytest.mark.parametrize("obj", [
        [], {"master_seed": 0}, {"per_family_count": 3},
        {"master_seed": 0, "per_family_count": 0},
        {"master_seed": -1, "per_family_count": 1},
        {"master_seed": 0, "per_family_count": 1, "grid": {"x_bins": 1}},
    ])
    def test_rejects_malformed(self, obj):
        with pytest.raises(ValueError):
            parse_dataset_spec(obj)


def test_family_table_is_complete():
    assert len(FAMILY_NAMES) == 13
    assert FAMILY_NAMES[0] == "beta" and FAMILY_NAMES[10] == "bernoulli"
    assert [FAMILIES[i].varying_params for i in range(13)] == [2, 0, 0, 1, 1, 0, 0, 5, 1, 1, 1, 0, 0]
