import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helmsman.forecast import (LoadProfileSpec, NoiseSpec, Pulse, TabulatedLoad, WindowForecaster,
                               generate_profile, inject_noise, load_at)
from helmsman.model import MW, ConfigError


class TestGenerateProfile:
    def test_constant_without_pulses(self):
        series = generate_profile(LoadProfileSpec(5 * MW, (), 1.0), 1e-3)
        assert series.shape == (1000,)
        assert np.all(series == 5 * MW)

    def test_single_pulse_window(self):
        spec = LoadProfileSpec(5 * MW, (Pulse(0.2, 0.1, 20 * MW),), 1.0)
        t = np.arange(1000) * 1e-3
        series = generate_profile(spec, 1e-3)
        on = (t >= 0.2 - 1e-12) & (t < 0.3 - 1e-12)
        assert np.all(series[on] == 25 * MW)
        assert np.all(series[~on] == 5 * MW)
        assert on.sum() == 100

    def test_overlapping_pulses_add(self):
        spec = LoadProfileSpec(5 * MW, (Pulse(0.1, 0.3, 10 * MW), Pulse(0.2, 0.3, 10 * MW)), 1.0)
        assert load_at(spec, 0.25) == 25 * MW
        assert load_at(spec, 0.15) == 15 * MW
        assert load_at(spec, 0.45) == 15 * MW
        assert load_at(spec, 0.55) == 5 * MW

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 0.9), st.floats(0.01, 0.1), st.floats(0, 2e6)), max_size=5),
           st.floats(0, 1))
    def test_superposition(self, pulses, t):
        spec = LoadProfileSpec(1 * MW, tuple(Pulse(*p) for p in pulses), 1.0)
        expected = 1 * MW + sum(h for s, d, h in pulses if s - 1e-9 <= t < s + d - 1e-9)
        assert load_at(spec, t) == pytest.approx(expected, rel=1e-12)

    def test_validation(self):
        over = LoadProfileSpec(25 * MW, (Pulse(1.0, 0.1, 10 * MW),), 10.0)
        late = LoadProfileSpec(5 * MW, (Pulse(9.95, 0.1, 1 * MW),), 10.0)
        with pytest.raises(ConfigError):
            over.validate()
        with pytest.raises(ConfigError):
            late.validate()
        assert LoadProfileSpec(5 * MW, (Pulse(9.9, 0.1, 1 * MW),), 10.0).errors() == []


class TestInjectNoise:
    def test_zero_noise_is_identity(self):
        series = np.linspace(1, 10, 50) * MW
        np.testing.assert_array_equal(inject_noise(series, NoiseSpec(0.0, 3)), series)

    def test_relative_spread(self):
        series = np.full(100_000, 10 * MW)
        out = inject_noise(series, NoiseSpec(10.0, 7))
        assert abs(out.std() / out.mean() - 0.10) <= 0.005

    def test_unbiased(self):
        series = np.full(100_000, 10 * MW)
        rel = (inject_noise(series, NoiseSpec(10.0, 11)) - series) / series
        assert abs(rel.mean()) <= 3 * 0.10 / np.sqrt(rel.size)

    def test_seeded(self):
        series = np.full(1000, 3 * MW)
        a = inject_noise(series, NoiseSpec(5.0, 1))
        assert np.array_equal(a, inject_noise(series, NoiseSpec(5.0, 1)))
        assert not np.array_equal(a, inject_noise(series, NoiseSpec(5.0, 2)))

    def test_negative_clamped(self):
        out = inject_noise(np.full(10_000, 1 * MW), NoiseSpec(100.0, 0))
        assert out.min() == 0.0

    @pytest.mark.parametrize("pct", [-1.0, 101.0])
    def test_percent_range(self, pct):
        assert NoiseSpec(pct).errors()


class TestWindowForecaster:
    def test_one_draw_held_over_window(self):
        spec = LoadProfileSpec(8 * MW, (Pulse(0.005, 0.1, 4 * MW),), 1.0)
        fc = WindowForecaster(lambda t: load_at(spec, t), NoiseSpec(10.0, 4))
        window = fc.window(0.0, 10, 1e-3)
        actual = load_at(spec, np.arange(10) * 1e-3)
        ratio = window / actual
        assert np.allclose(ratio, ratio[0], rtol=1e-14)
        assert ratio[0] != 1.0

    def test_exact_without_noise(self):
        spec = LoadProfileSpec(8 * MW, (Pulse(0.005, 0.1, 4 * MW),), 1.0)
        fc = WindowForecaster(lambda t: load_at(spec, t), NoiseSpec(0.0, 4))
        np.testing.assert_array_equal(fc.window(0.001, 10, 1e-3), load_at(spec, 0.001 + np.arange(10) * 1e-3))

    def test_seed_argument_overrides(self):
        fn = lambda t: np.full(np.shape(t), 1 * MW)
        a = WindowForecaster(fn, NoiseSpec(5.0, 0), seed=9).window(0.0, 3, 1e-3)
        b = WindowForecaster(fn, NoiseSpec(5.0, 9)).window(0.0, 3, 1e-3)
        assert np.array_equal(a, b)


class TestTabulatedLoad:
    def test_zero_order_hold(self, tmp_path):
        path = tmp_path / "load.csv"
        path.write_text("time_s,power_w\n0,1e6\n0.5,3e6\n")
        load = TabulatedLoad.from_csv(path)
        np.testing.assert_array_equal(load(np.array([0.0, 0.25, 0.5, 0.9])), [1e6, 1e6, 3e6, 3e6])

    def test_empty_file(self, tmp_path):
        path = tmp_path / "load.csv"
        path.write_text("time_s,power_w\n")
        with pytest.raises(ConfigError):
            TabulatedLoad.from_csv(path)
