import numpy as np
import pytest
from scipy.integrate import quad

from vnlw.field_core import gaussian_field, make_grid
from vnlw.kernel_lab import (
    PROFILE_SCHEMA,
    KernelProfile,
    convolve_direct,
    decay_fit,
    explicit_formula,
    explicit_formula_check,
    kernel_samples,
    poisson_constant,
    poisson_kernel,
    scaled_kernel,
    smoothing_ratios,
    unit_kernel,
    upper_envelope,
    write_profile_csv,
)
from vnlw.propagator import s_operator
from vnlw.harness import fit_exponent


@pytest.fixture(scope="module")
def kernel_1d():
    return unit_kernel(make_grid(1, 4096, 40.0))


@pytest.fixture(scope="module")
def kernel_2d():
    return unit_kernel(make_grid(2, 256, 16.0))


class TestUnitKernel:
    def test_real(self):
        raw = kernel_samples(make_grid(2, 128, 8.0))
        assert np.abs(raw.imag).max() <= 1e-10 * np.abs(raw.real).max()

    def test_radial(self, kernel_2d):
        assert kernel_2d.angular_variance <= 1e-6

    def test_integral_equals_zero_frequency_multiplier(self, kernel_1d, kernel_2d):
        # the multiplier equals 1 at xi = 0
        assert kernel_1d.integral() == pytest.approx(1.0, abs=1e-12)
        assert kernel_2d.integral() == pytest.approx(1.0, abs=1e-12)

    def test_l1_stable_under_refinement(self):
        a = unit_kernel(make_grid(1, 2048, 20.0)).lebesgue_norm(1)
        b = unit_kernel(make_grid(1, 8192, 40.0)).lebesgue_norm(1)
        assert np.isfinite(a) and abs(b / a - 1) <= 0.01

    @pytest.mark.parametrize("q", [1.0, 2.0, np.inf])
    def test_norms_stable_2d(self, q):
        a = unit_kernel(make_grid(2, 256, 16.0)).lebesgue_norm(q)
        b = unit_kernel(make_grid(2, 512, 32.0)).lebesgue_norm(q)
        assert abs(b / a - 1) <= 0.02

    def test_profile_invariants(self):
        with pytest.raises(ValueError):
            KernelProfile(1, np.array([0.0, 1.0]), np.array([1.0, np.nan]))
        with pytest.raises(ValueError):
            KernelProfile(1, np.array([0.5, 1.0]), np.array([1.0, 0.5]))


class TestScaling:
    def test_identity(self, kernel_1d):
        s = scaled_kernel(kernel_1d, 1.0)
        np.testing.assert_array_equal(s.values, kernel_1d.values)

    @pytest.mark.parametrize("n,N,L", [(1, 1024, 20.0), (2, 128, 8.0), (3, 32, 4.0)])
    @pytest.mark.parametrize("t", [0.5, 2.0])
    def test_direct_recompute(self, n, N, L, t):
        base = unit_kernel(make_grid(n, N, L))
        direct = unit_kernel(make_grid(n, N, L * t), t)
        scaled = scaled_kernel(base, t)
        assert np.abs(direct.samples - scaled.samples).max() <= 1e-8 * np.abs(scaled.samples).max()

    @pytest.mark.parametrize("q", [1.0, 2.0, 4.0, np.inf])
    def test_lebesgue_scaling(self, q):
        n, t = 2, 0.5
        base = unit_kernel(make_grid(n, 128, 8.0))
        direct = unit_kernel(make_grid(n, 128, 8.0 * t), t)
        expo = 1 - n + (0.0 if q == np.inf else n / q)
        assert direct.lebesgue_norm(q) == pytest.approx(t**expo * base.lebesgue_norm(q), rel=1e-8)

    def test_nonpositive(self, kernel_1d):
        with pytest.raises(ValueError):
            scaled_kernel(kernel_1d, 0.0)


class TestPoisson:
    def test_constant_1d(self):
        oracle = quad(lambda x: np.exp(-abs(x) / 2), -np.inf, np.inf)[0] / (2 * np.pi)
        assert poisson_constant(1) == pytest.approx(oracle, rel=1e-12)
        assert poisson_constant(1) == pytest.approx(2 / np.pi, rel=1e-12)

    @pytest.mark.parametrize("n,value", [(2, 2 / np.pi), (3, 8 / np.pi**2)])
    def test_constant_higher(self, n, value):
        assert poisson_constant(n) == pytest.approx(value, rel=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_decay_ratio(self, n):
        ratio = poisson_kernel(n, 10.0) / poisson_kernel(n, 5.0)
        assert ratio == pytest.approx((401 / 101) ** (-(n + 1) / 2), rel=1e-14)

    def test_nonnegative(self):
        assert np.all(poisson_kernel(2, np.linspace(0, 100, 1001)) >= 0)

    def test_dimension_guard(self):
        with pytest.raises(ValueError):
            poisson_constant(4)

    def test_poisson_slope(self):
        r = np.linspace(0, 400, 4001)
        prof = KernelProfile(1, r, poisson_kernel(1, r))
        assert decay_fit(prof, 20.0, 200.0) == pytest.approx(-2.0, abs=0.1)


class TestExplicit:
    def test_1d(self):
        assert explicit_formula_check(1, make_grid(1, 4096, 40.0)) <= 1e-3

    def test_2d(self):
        assert explicit_formula_check(2, make_grid(2, 256, 16.0)) <= 1e-2

    def test_3d(self):
        assert explicit_formula_check(3, make_grid(3, 64, 6.0)) <= 1e-2

    def test_unresolved(self):
        with pytest.raises(ValueError, match="unresolved"):
            explicit_formula_check(2, make_grid(2, 32, 16.0))

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_formula_mass(self, n):
        # convolution of a probability measure with the Poisson kernel keeps its mass
        from scipy.special import gamma

        area = 2 * np.pi ** (n / 2) / gamma(n / 2)
        mass = quad(lambda r: area * r ** (n - 1) * explicit_formula(n, np.array([r]))[0], 0, np.inf,
                    limit=400)[0]
        assert mass == pytest.approx(1.0, rel=1e-4)


class TestDecay:
    def test_envelope(self):
        flags = upper_envelope(np.array([3.0, -1.0, 2.0, 0.5, -0.7, 0.1]))
        np.testing.assert_array_equal(flags, [True, False, True, False, True, True])

    def test_unit_1d(self, kernel_1d):
        assert decay_fit(kernel_1d, 5.0, 10.0) <= -1.7

    def test_unit_2d(self):
        prof = unit_kernel(make_grid(2, 512, 32.0))
        assert decay_fit(prof, 5.0, 16.0) <= -2.7

    def test_beyond_trusted_radius(self, kernel_1d):
        with pytest.raises(ValueError, match="trusted"):
            decay_fit(kernel_1d, 5.0, 30.0)

    def test_too_few_points(self, kernel_1d):
        with pytest.raises(ValueError, match="fewer than 3"):
            decay_fit(kernel_1d, 5.0, 5.001)

    def test_csv(self, tmp_path, kernel_1d):
        path = tmp_path / "k.csv"
        write_profile_csv(kernel_1d, path)
        lines = path.read_text().splitlines()
        assert lines[0] == PROFILE_SCHEMA
        assert lines[1] == "radius,value,envelope_flag"
        assert len(lines) == 2 + len(kernel_1d.radii)


class TestConvolution:
    @pytest.mark.parametrize("t", [0.3, 1.0])
    def test_multiplier_equals_direct_sum(self, rng, t):
        from vnlw.field_core import SpectralField

        g = make_grid(2, 16, 4.0)
        phi = SpectralField.from_samples(g, rng.standard_normal(g.shape))
        via_sum = convolve_direct(kernel_samples(g, t).real, phi)
        assert np.abs(s_operator(phi, t).samples - via_sum).max() <= 1e-8 * np.abs(via_sum).max()

    def test_smoothing_exponent(self):
        ts = np.geomspace(0.1, 2.0, 6)
        slope, _, _ = fit_exponent(ts, smoothing_ratios(make_grid(2, 256, 16.0), ts))
        assert abs(slope) <= 0.1

    def test_smoothing_dominates_smooth_data(self):
        g = make_grid(2, 256, 16.0)
        from vnlw.field_core import lebesgue_norm

        phi = gaussian_field(g, 1.0)
        t = 0.5
        ratio = lebesgue_norm(s_operator(phi, t), np.inf) / lebesgue_norm(phi, 2)
        assert ratio <= smoothing_ratios(g, [t])[0] * (1 + 1e-9)
