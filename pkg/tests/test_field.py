import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectra_gauntlet.field import (Grid, PeriodicField, Spectrum, derivative_wavenumbers, make_grid,
                                    mode_weights, parseval_energy, spectral_derivative, to_field,
                                    to_spectrum, wavenumbers)

sizes = st.sampled_from([4, 8, 16, 64, 256])
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def fields(draw, n=None):
    n = n if n is not None else draw(sizes)
    length = draw(st.floats(0.5, 100.0))
    values = draw(arrays(np.float64, n, elements=finite))
    return PeriodicField(make_grid(n, length), values)


def band_limited(grid, rng, k_top):
    c = np.zeros(grid.n_modes, complex)
    c[1:k_top + 1] = rng.standard_normal(k_top) + 1j * rng.standard_normal(k_top)
    return to_field(Spectrum(grid, c))


class TestGrid:
    def test_points_and_spacing(self):
        g = make_grid(16, 2.0)
        assert g.points[0] == 0.0
        assert np.all(np.diff(g.points) > 0)
        np.testing.assert_allclose(np.diff(g.points), g.spacing, rtol=0, atol=1e-15)
        assert g.n_modes == 9

    @pytest.mark.parametrize("n", [0, 3, 12, 100])
    def test_rejects_non_power_of_two(self, n):
        with pytest.raises(ValueError):
            make_grid(n, 1.0)

    @pytest.mark.parametrize("length", [0.0, -1.0, np.inf, np.nan])
    def test_rejects_bad_length(self, length):
        with pytest.raises(ValueError):
            make_grid(8, length)

    def test_rejects_float_size(self):
        with pytest.raises(TypeError):
            Grid(8.0, 1.0)

    def test_wavenumbers(self):
        g = make_grid(8, 2 * np.pi)
        np.testing.assert_allclose(wavenumbers(g), np.arange(5))
        assert derivative_wavenumbers(g)[-1] == 0.0
        np.testing.assert_array_equal(mode_weights(g), [1, 2, 2, 2, 1])


class TestContainers:
    def test_field_shape_and_finiteness(self):
        g = make_grid(8, 1.0)
        with pytest.raises(ValueError):
            PeriodicField(g, np.zeros(7))
        with pytest.raises(ValueError):
            PeriodicField(g, np.array([0, 0, 0, np.nan, 0, 0, 0, 0.0]))

    def test_field_is_immutable(self):
        u = PeriodicField(make_grid(8, 1.0), np.zeros(8))
        with pytest.raises(ValueError):
            u.values[0] = 1.0

    def test_spectrum_rejects_complex_mean_and_nyquist(self):
        g = make_grid(8, 1.0)
        c = np.zeros(5, complex)
        c[0] = 1j
        with pytest.raises(ValueError, match="mode 0"):
            Spectrum(g, c)
        c[0] = 0
        c[4] = 0.5j
        with pytest.raises(ValueError, match="mode 4"):
            Spectrum(g, c)

    def test_spectrum_shape(self):
        with pytest.raises(ValueError):
            Spectrum(make_grid(8, 1.0), np.zeros(4))

    def test_field_arithmetic_checks_grid(self):
        a = PeriodicField(make_grid(8, 1.0), np.ones(8))
        b = PeriodicField(make_grid(8, 2.0), np.ones(8))
        with pytest.raises(ValueError):
            a + b
        np.testing.assert_array_equal((2 * a - a).values, np.ones(8))


class TestTransforms:
    def test_unit_sine_coefficient(self):
        g = make_grid(32, 3.0)
        u = PeriodicField.from_function(g, lambda x: np.sin(2 * np.pi * 3 * x / 3.0))
        c = to_spectrum(u).coeffs
        assert abs(abs(c[3]) - 0.5) < 1e-14
        assert parseval_energy(u) == pytest.approx(0.5, rel=1e-13)

    @settings(max_examples=60, deadline=None)
    @given(fields())
    def test_roundtrip(self, u):
        back = to_field(to_spectrum(u))
        assert np.max(np.abs(back.values - u.values)) <= 1e-12 * max(1.0, np.max(np.abs(u.values)))

    @settings(max_examples=60, deadline=None)
    @given(fields())
    def test_parseval(self, u):
        direct = float(np.mean(u.values ** 2))
        assert parseval_energy(u) == pytest.approx(direct, rel=1e-12, abs=1e-300)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 256).map(lambda m: 1 << (m.bit_length())), st.floats(-5, 5), st.floats(-5, 5),
           st.integers(0, 2 ** 31))
    def test_linearity(self, n, a, b, seed):
        r = np.random.default_rng(seed)
        g = make_grid(n, 1.0)
        u = PeriodicField(g, r.standard_normal(n))
        v = PeriodicField(g, r.standard_normal(n))
        lhs = to_spectrum(a * u + b * v).coeffs
        rhs = a * to_spectrum(u).coeffs + b * to_spectrum(v).coeffs
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


class TestDerivative:
    def test_sine_derivatives(self):
        g = make_grid(64, 2 * np.pi)
        u = PeriodicField.from_function(g, lambda x: np.sin(3 * x))
        np.testing.assert_allclose(spectral_derivative(u, 1).values, 3 * np.cos(3 * g.points), atol=1e-12)
        np.testing.assert_allclose(spectral_derivative(u, 2).values, -9 * np.sin(3 * g.points), atol=1e-11)
        np.testing.assert_allclose(spectral_derivative(u, 4).values, 81 * np.sin(3 * g.points), atol=1e-9)

    def test_odd_derivative_drops_nyquist(self):
        g = make_grid(8, 2 * np.pi)
        u = PeriodicField(g, np.cos(4 * g.points))
        np.testing.assert_allclose(spectral_derivative(u, 1).values, 0.0, atol=1e-14)
        np.testing.assert_allclose(spectral_derivative(u, 2).values, -16 * u.values, atol=1e-12)

    @pytest.mark.parametrize("order", [0, 5, -1])
    def test_order_range(self, order):
        with pytest.raises(ValueError):
            spectral_derivative(PeriodicField(make_grid(8, 1.0), np.zeros(8)), order)

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from([16, 64, 256]), st.integers(0, 2 ** 31))
    def test_first_twice_equals_second(self, n, seed):
        g = make_grid(n, 2 * np.pi)
        u = band_limited(g, np.random.default_rng(seed), n // 4)
        twice = spectral_derivative(spectral_derivative(u, 1), 1)
        np.testing.assert_allclose(twice.values, spectral_derivative(u, 2).values, rtol=0, atol=1e-9)
