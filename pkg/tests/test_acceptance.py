"""Acceptance criteria, one PASS/FAIL line each (see the terminal summary).

Tolerances are pinned here and not read from the experiment configs, so a
config edit cannot loosen a criterion.  Experiment-backed criteria run the
shipped configs under ``configs/``.
"""

import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from vnlw.field_core import CauchyData, SpectralField, make_grid, random_bandlimited_field, scale_data, sobolev_norm
from vnlw.harness import ExperimentConfig, run
from vnlw.nonlinear_solver import energy_nu_k
from vnlw.propagator import PropagatorParams, duhamel_history, evolve_homogeneous, homogeneous_trajectory
from vnlw.propagator import source_history
from vnlw.randomization import RandomLaw, SeedSpec, build_partition, moment_report, randomize

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
HALF_SQRT3 = np.sqrt(3.0) / 2.0


@lru_cache(maxsize=None)
def experiment(name):
    """Run ``configs/<name>.yaml`` once per session; returns ``(report, seconds)``."""
    cfg = ExperimentConfig.load(CONFIGS / f"{name}.yaml")
    t0 = time.perf_counter()
    report = run(cfg)
    return report, time.perf_counter() - t0


def verdicts(name):
    return experiment(name)[0].result.verdicts


def rk4_modes(a, f, g, T, steps):
    """Classical RK4 for ``u'' + a u' + a^2 u = 0``, vectorized over modes."""
    h = T / steps
    y = np.stack([f.astype(complex), g.astype(complex)])

    def rhs(y):
        return np.stack([y[1], -a * y[1] - a * a * y[0]])

    for _ in range(steps):
        k1 = rhs(y)
        k2 = rhs(y + h / 2 * k1)
        k3 = rhs(y + h / 2 * k2)
        k4 = rhs(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


class TestLinear:
    def test_01_propagator_exactness(self, verdict_line):
        t0 = time.perf_counter()
        rng = np.random.default_rng(1)
        g = make_grid(1, 256, 32.0)
        modes = rng.choice(np.flatnonzero(np.abs(g.axis_frequencies) <= 8.0), 100, replace=False)
        f = np.zeros(g.shape, complex)
        v = np.zeros(g.shape, complex)
        f[modes] = rng.standard_normal(100) + 1j * rng.standard_normal(100)
        v[modes] = rng.standard_normal(100) + 1j * rng.standard_normal(100)
        T = 1.5
        u, ut = evolve_homogeneous(CauchyData(SpectralField(g, f, False), SpectralField(g, v, False)), T,
                                   PropagatorParams(1.0, g))
        ref = rk4_modes(np.abs(g.axis_frequencies[modes]), f[modes], v[modes], T, 20000)
        err = max(np.abs(u.modes[modes] - ref[0]).max() / np.abs(ref[0]).max(),
                  np.abs(ut.modes[modes] - ref[1]).max() / np.abs(ref[1]).max())
        secs = time.perf_counter() - t0
        ok = verdict_line("[01] propagator vs RK oracle", err <= 1e-8 and secs < 10,
                          f"max rel err {err:.2e} (tol 1e-8), {secs:.1f} s (limit 10 s)")
        assert ok

    def test_02_duhamel_residual(self, verdict_line):
        t0 = time.perf_counter()
        g = make_grid(2, 64, np.pi)
        params = PropagatorParams(1.0, g)
        nt = 2049
        times = np.linspace(0, 1, nt)
        shape = random_bandlimited_field(g, 6.0, np.random.default_rng(2)).modes
        env = np.cos(4 * times) + times**3
        F = source_history(params, times, env[:, None, None] * shape[None])
        U, V = duhamel_history(F, params)
        a = g.xi_magnitude
        h = times[1] - times[0]
        mid = slice(2, nt - 2)
        vt = (-V[4:] + 8 * V[3:-1] - 8 * V[1:-3] + V[:-4]) / (12 * h)
        resid = np.abs(vt + a * V[mid] + a * a * U[mid] - F.u_modes[mid]).max() / np.abs(F.u_modes).max()
        secs = time.perf_counter() - t0
        ok = verdict_line("[02] Duhamel residual", resid <= 1e-6 and secs < 30,
                          f"rel residual {resid:.2e} (tol 1e-6), {secs:.1f} s (limit 30 s)")
        assert ok

    def test_03_energy_dissipation(self, verdict_line):
        g = make_grid(2, 32, 6.0)
        params = PropagatorParams(1.0, g)
        rng = np.random.default_rng(3)
        worst_step, worst_rate = 0.0, 0.0
        h = 1e-4
        for _ in range(20):
            data = CauchyData(random_bandlimited_field(g, 4.0, rng), random_bandlimited_field(g, 4.0, rng))
            traj = homogeneous_trajectory(data, np.linspace(0, 2, 81), params)
            E = np.array([energy_nu_k(traj.state(i), 1.0) for i in range(len(traj))])
            worst_step = max(worst_step, float(np.diff(E).max() / E[0]))
            for t in (0.3, 1.1):
                e = [energy_nu_k(evolve_homogeneous(data, s, params), 1.0) for s in (t - h, t + h)]
                ut = evolve_homogeneous(data, t, params)[1]
                rate = -sobolev_norm(ut, 0.5, homogeneous=True) ** 2
                worst_rate = max(worst_rate, abs((e[1] - e[0]) / (2 * h) - rate) / abs(rate))
        ok = verdict_line("[03] energy dissipation", worst_step <= 1e-12 and worst_rate <= 1e-6,
                          f"max rel increase {worst_step:.2e} (tol 1e-12), "
                          f"dE/dt identity rel err {worst_rate:.2e} (tol 1e-6)")
        assert ok

    def test_07_critical_norm_invariance(self, verdict_line):
        g = make_grid(2, 256, 24.0)
        f = SpectralField.from_function(g, lambda x, y: (2 - x * x - y * y) * np.exp(-(x * x + y * y) / 2))
        data = CauchyData(f, f * 0.5)
        base = (sobolev_norm(f, 0.5, homogeneous=True), sobolev_norm(f * 0.5, -0.5, homogeneous=True))
        dev = 0.0
        for lam in np.linspace(0.5, 2.0, 7):
            scaled = scale_data(data, float(lam), 5)
            pair = (sobolev_norm(scaled.displacement, 0.5, homogeneous=True),
                    sobolev_norm(scaled.velocity, -0.5, homogeneous=True))
            dev = max(dev, *(abs(a / b - 1.0) for a, b in zip(pair, base)))
        ok = verdict_line("[07] critical norm invariance", dev <= 0.01,
                          f"max rel deviation {dev:.2e} over lambda in [1/2, 2] (tol 1e-2)")
        assert ok


class TestOscillator:
    def test_04_oscillator(self, verdict_line):
        v = verdicts("oscillator")
        cos_err = v["p1_cos"]["value"]
        drift = max(v["p3_drift"]["value"], v["p5_drift"]["value"])
        agree = max(v[f"p{p}_period_agreement"]["value"] for p in (1, 3, 5))
        p3 = v["p3_period"]["value"]
        ok = cos_err <= 1e-9 and drift <= 1e-10 and agree <= 1e-8 and abs(p3 - 7.4163) <= 1e-4
        ok = verdict_line("[04] limit oscillator", ok,
                          f"cos err {cos_err:.1e} (1e-9), drift/period {drift:.1e} (1e-10), "
                          f"period agreement {agree:.1e} (1e-8), p=3 period {p3:.6f} (7.4163 +- 1e-4)")
        assert ok


class TestNonlinear:
    def test_05_closeness_scaling(self, verdict_line):
        report, secs = experiment("closeness")
        slope = report.result.fits["error_vs_nu"]["slope"]
        ok = verdict_line("[05] closeness scaling", 0.8 <= slope <= 1.1 and secs < 600,
                          f"slope {slope:.3f} (window [0.8, 1.1]), {secs:.0f} s (limit 600 s)")
        assert ok

    def test_06_norm_inflation(self, verdict_line):
        report, _ = experiment("inflation")
        v = report.result.verdicts
        ratio = v["max_ratio"]["value"]
        dev = v["norm0_on_curve"]["value"]
        growth = report.result.fits["growth"]
        slopes = [g_["slope"] for g_ in growth]
        slope_ok = bool(slopes) and all(abs(s - 0.25) <= 0.2 for s in slopes)
        ok = verdict_line("[06] norm inflation", ratio >= 10 and dev <= 0.02 and slope_ok,
                          f"max ratio {ratio:.3g} (>= 10), |norm0/eps - 1| {dev:.2e} (tol 0.02), "
                          f"late slopes {np.round(slopes, 3).tolist()} (0.25 +- 0.2)")
        assert ok

    def test_13_picard_contraction(self, verdict_line):
        report, _ = experiment("picard")
        v = report.result.verdicts
        ratios = np.asarray(report.result.fits["run"]["ratios"])
        dist = v["agrees_with_solver"]["value"]
        ok = (v["below_lambda0"]["pass"] and len(ratios) >= 5 and bool(np.all(ratios[:5] <= 0.5))
              and dist <= 1e-4)
        ok = verdict_line("[13] Picard contraction", ok,
                          f"{len(ratios)} ratios, max of first 5 {ratios[:5].max():.3f} (<= 0.5), "
                          f"X_T distance to stepper {dist:.1e} (tol 1e-4)")
        assert ok


class TestDispersive:
    def test_08_strichartz(self, verdict_line):
        report, _ = experiment("strichartz")
        v = report.result.verdicts
        var = v["scale_variation"]["value"]
        refine = v["refinement_stability"]["value"]
        one = v["bounded_1d"]["value"]
        m = report.result.fits["max_ratio"]
        ok = var < 0.05 and refine <= 0.10 and one <= 0.10 and np.isfinite(m["N"])
        ok = verdict_line("[08] Strichartz ratio", ok,
                          f"scale variation {var:.2e} (< 0.05), N-doubling change {refine:.2e} (<= 0.10), "
                          f"1d N-doubling change {one:.2e} (<= 0.10)")
        assert ok

    def test_09_kernel_suite(self, verdict_line):
        v = verdicts("kernel")
        rows = experiment("kernel")[0].result.tables["kernel"]
        cols, data = rows
        target = np.sin(HALF_SQRT3) / HALF_SQRT3
        ints = [r[cols.index("integral")] for r in data]
        int_err = max(abs(i - target) for i in ints)
        radial = max(v[f"n{n}_radial"]["value"] for n in (1, 2, 3))
        scaling = max(v[f"n{n}_scaling"]["value"] for n in (1, 2, 3))
        explicit = {n: v[f"n{n}_explicit"]["value"] for n in (1, 2, 3)}
        decay = {n: v[f"n{n}_decay"]["value"] for n in (1, 2)}
        ok = (radial <= 1e-6 and int_err <= 1e-6 and scaling <= 1e-8 and explicit[1] <= 1e-3
              and explicit[2] <= 1e-2 and explicit[3] <= 1e-2 and all(decay[n] <= -(n + 1) + 0.3 for n in decay))
        ok = verdict_line("[09] kernel suite", ok,
                          f"integral {np.round(ints, 8).tolist()} vs sin(a)/a = {target:.6f} "
                          f"(err {int_err:.2e}, tol 1e-6), radial {radial:.1e}, scaling {scaling:.1e} (1e-8), "
                          f"explicit {[f'{e:.1e}' for e in explicit.values()]}, "
                          f"decay slopes {[round(d, 2) for d in decay.values()]} (<= -2.7, -3.7 + 1)")
        assert ok

    def test_10_smoothing_exponent(self, verdict_line):
        slope = experiment("kernel")[0].result.fits["smoothing"]["slope"]
        ok = verdict_line("[10] smoothing exponent", abs(slope) <= 0.1,
                          f"t-exponent {slope:.4f} (0 +- 0.1)")
        assert ok


class TestProbabilistic:
    def test_11_randomization_suite(self, verdict_line):
        g = make_grid(2, 64, 4 * np.pi)
        part = build_partition(g)
        residual = part.sum_residual()
        f = random_bandlimited_field(g, 6.0, np.random.default_rng(11))
        data = CauchyData(f, f * 0.5)
        same = randomize(data, RandomLaw("ones"), SeedSpec(1), part)
        ident = max(np.abs(same.displacement.modes - f.modes).max(),
                    np.abs(same.velocity.modes - 0.5 * f.modes).max()) / np.abs(f.modes).max()
        rad = moment_report(RandomLaw("rademacher"), 10_000, SeedSpec(2))
        # even moments are identically 1; odd ones are sample means of a symmetric law
        m, se = np.array(rad["moments"]), np.array(rad["stderr"])
        rad_ok = np.array_equal(m[1::2], np.ones(3)) and bool(np.all(np.abs(m[::2]) <= 3 * se[::2]))
        uni = moment_report(RandomLaw("uniform"), 10_000, SeedSpec(3))
        z6 = abs(uni["moments"][5] - 27 / 7) / uni["stderr"][5]
        ld = uni["large_deviation"][6]
        ok = residual <= 1e-12 and ident <= 1e-12 and rad_ok and z6 <= 3 and len(ld) == 100 and ld.max() <= 3.0
        ok = verdict_line("[11] randomization suite", ok,
                          f"partition residual {residual:.1e} (1e-12), ones law {ident:.1e} (1e-12), "
                          f"Rademacher even moments exact, odd within 3 sigma {rad_ok}, uniform sixth moment {uni['moments'][5]:.4f} "
                          f"({z6:.2f} sigma from 27/7, <= 3), L6 large-deviation ratio max {ld.max():.3f} "
                          f"over {len(ld)} vectors (<= 3)")
        assert ok

    def test_12_averaging(self, verdict_line):
        report, secs = experiment("averaging")
        slope = report.result.fits["T_exponent"]["slope"]
        h = report.result.verdicts["degree6_homogeneity"]["value"]
        target = 1.0 / 6.0
        ok = slope > 0 and abs(slope - target) <= 0.5 * target and abs(h - 1) <= 0.1 and secs < 1200
        ok = verdict_line("[12] averaging exponent", ok,
                          f"T-exponent {slope:.3f} (window [0.083, 0.250]), homogeneity {h:.3f} (1 +- 0.1), "
                          f"{secs:.0f} s (limit 1200 s)")
        assert ok

    def test_14_probabilistic(self, verdict_line):
        report, _ = experiment("probabilistic")
        v = report.result.verdicts
        freq = v["non_increasing_as_T_decreases"]["value"]
        cont = v["continuity_event"]["value"]
        c_hat = report.result.fits["shape_constant"]["C_hat"]
        ok = v["non_increasing_as_T_decreases"]["pass"] and v["continuity_event"]["pass"] and np.isfinite(c_hat)
        ok = verdict_line("[14] probabilistic existence", ok,
                          f"non-contraction by decreasing T {freq} (non-increasing), C_hat {c_hat:.3f}, "
                          f"continuity event frequency {cont:.2f} (> 0.9)")
        assert ok
