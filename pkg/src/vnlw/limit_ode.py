"""The oscillator ``V'' + V^p = 0`` and the pointwise limit field built from it.

``V`` starts at ``V(0) = 1, V'(0) = 0``; it is even and periodic.  The limit
field is ``phi0(x) * V(t * phi0(x)^((p-1)/2))`` with velocity
``phi0^((p+1)/2) * V'(t * phi0^((p-1)/2))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad, solve_ivp

from .field_core import SpectralField, sobolev_norm


def _check_p(p: int):
    if int(p) != p or p < 1 or p % 2 == 0:
        raise ValueError(f"p must be an odd positive integer, got {p}")


def _rhs(p):
    def f(t, y):
        return [y[1], -y[0] ** p]
    return f


def oscillator_energy(v, vd, p):
    return 0.5 * vd**2 + v ** (p + 1) / (p + 1)


@lru_cache(maxsize=None)
def period_V(p: int) -> float:
    """Period from ``T = 4 int_0^1 dv / sqrt(2 (1 - v^(p+1)) / (p+1))``.

    The substitution ``v = sin(theta)`` removes the endpoint singularity at
    ``v = 1``.  Writing ``phi = pi/2 - theta`` the integrand
    ``cos(theta) / sqrt(1 - v^(p+1))`` equals
    ``sqrt(2) cos(phi/2) / sqrt(1 + v + ... + v^p)``, which is smooth and
    free of cancellation.
    """
    _check_p(p)

    def integrand(phi):
        v = np.cos(phi)
        poly = sum(v**j for j in range(p + 1))
        return np.sqrt(2.0) * np.cos(0.5 * phi) / np.sqrt(poly)

    val, _ = quad(integrand, 0.0, 0.5 * np.pi, epsabs=0.0, epsrel=1e-13, limit=200)
    return 4.0 * np.sqrt((p + 1) / 2.0) * val


def period_by_return(p: int, rtol: float = 1e-13) -> float:
    """Period as the first return of the integrated solution to ``(1, 0)``."""
    _check_p(p)

    def event(t, y):
        return y[1]

    event.direction = -1.0  # V' crosses zero from above at V = 1
    T0 = period_V(p)
    sol = solve_ivp(_rhs(p), (0.0, 1.5 * T0), [1.0, 0.0], method="DOP853",
                    rtol=rtol, atol=rtol, events=event)
    times = [t for t in sol.t_events[0] if t > 0.25 * T0]
    return float(times[0])


@dataclass(frozen=True)
class OscillatorSolution:
    """Uniform samples of ``(V, V')`` over one period plus a quintic Hermite interpolant."""

    p: int
    period: float
    t_max: float
    times: np.ndarray
    values: np.ndarray
    slopes: np.ndarray

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    def __call__(self, t):
        return self.evaluate(t)[0]

    def evaluate(self, t):
        """Return ``(V(t), V'(t))``; negative and large ``t`` use evenness and periodicity."""
        t = np.asarray(t, dtype=float)
        tau = np.mod(np.abs(t), self.period)
        sign = np.sign(t)
        h = self.step
        idx = np.minimum((tau / h).astype(np.int64), len(self.times) - 2)
        s = tau / h - idx
        y0, y1 = self.values[idx], self.values[idx + 1]
        d0, d1 = h * self.slopes[idx], h * self.slopes[idx + 1]
        p = self.p
        c0, c1 = -h * h * y0**p, -h * h * y1**p
        # quintic Hermite basis on [0, 1]
        s2, s3 = s * s, s * s * s
        s4, s5 = s3 * s, s3 * s2
        h00 = 1 - 10 * s3 + 15 * s4 - 6 * s5
        h10 = s - 6 * s3 + 8 * s4 - 3 * s5
        h20 = 0.5 * (s2 - 3 * s3 + 3 * s4 - s5)
        h01 = 10 * s3 - 15 * s4 + 6 * s5
        h11 = -4 * s3 + 7 * s4 - 3 * s5
        h21 = 0.5 * (s3 - 2 * s4 + s5)
        v = h00 * y0 + h10 * d0 + h20 * c0 + h01 * y1 + h11 * d1 + h21 * c1
        # derivative of the basis
        g00 = -30 * s2 + 60 * s3 - 30 * s4
        g10 = 1 - 18 * s2 + 32 * s3 - 15 * s4
        g20 = 0.5 * (2 * s - 9 * s2 + 12 * s3 - 5 * s4)
        g01 = 30 * s2 - 60 * s3 + 30 * s4
        g11 = -12 * s2 + 28 * s3 - 15 * s4
        g21 = 0.5 * (3 * s2 - 8 * s3 + 5 * s4)
        vd = (g00 * y0 + g10 * d0 + g20 * c0 + g01 * y1 + g11 * d1 + g21 * c1) / h
        vd = np.where(sign < 0, -vd, vd)
        return v, vd

    def energy_drift(self) -> float:
        e = oscillator_energy(self.values, self.slopes, self.p)
        return float(np.abs(e - 1.0 / (self.p + 1)).max())


@lru_cache(maxsize=32)
def _solve_cached(p: int, tol: float, samples_per_period: int):
    T = period_V(p)
    grid = np.linspace(0.0, T, samples_per_period + 1)
    rt = max(tol * 1e-2, 2.5e-14)
    sol = solve_ivp(_rhs(p), (0.0, T), [1.0, 0.0], method="DOP853", rtol=rt, atol=rt,
                    t_eval=grid, dense_output=False)
    vals = sol.y[0].copy()
    slopes = sol.y[1].copy()
    # periodic closure: the last sample is the initial state
    vals[-1], slopes[-1] = 1.0, 0.0
    return T, grid, vals, slopes


def solve_V(p: int, t_max: float = None, tol: float = 1e-12,
            samples_per_period: int = 256) -> OscillatorSolution:
    """Integrate ``V'' + V^p = 0`` with an 8th-order Runge-Kutta method (DOP853).

    One period is stored on a uniform grid; evaluation beyond ``t_max`` or at
    negative times extends the solution by periodicity and evenness.
    """
    _check_p(p)
    if tol < 1e-12:
        raise ValueError("tol must be >= 1e-12")
    if samples_per_period < 64:
        raise ValueError("need at least 64 samples per period")
    T, grid, vals, slopes = _solve_cached(int(p), float(tol), int(samples_per_period))
    if t_max is None:
        t_max = T
    return OscillatorSolution(int(p), T, float(t_max), grid, vals, slopes)


def integrate_V(p: int, t_eval, rtol: float = 1e-13) -> np.ndarray:
    """Direct DOP853 integration returning ``(V, V')`` at ``t_eval`` (reference oracle)."""
    t_eval = np.asarray(t_eval, dtype=float)
    if not np.any(t_eval):
        return np.stack([np.ones_like(t_eval), np.zeros_like(t_eval)])
    t_end = float(t_eval.max()) if t_eval.max() > 0 else float(t_eval.min())
    sol = solve_ivp(_rhs(p), (0.0, t_end), [1.0, 0.0], method="DOP853",
                    rtol=rtol, atol=rtol, t_eval=t_eval)
    return sol.y


def phi0_state(phi0: SpectralField, t: float, p: int, osc: OscillatorSolution = None):
    """Limit field and its time derivative at time ``t``."""
    _check_p(p)
    if not phi0.real:
        raise ValueError("phi0 must be real-valued")
    if osc is None:
        osc = solve_V(p)
    x = phi0.samples
    amp = x ** ((p - 1) // 2)
    v, vd = osc.evaluate(t * amp)
    u = x * v
    ut = x * amp * vd
    return SpectralField.from_samples(phi0.grid, u), SpectralField.from_samples(phi0.grid, ut)


def phi0_field(phi0: SpectralField, t: float, p: int, osc: OscillatorSolution = None) -> SpectralField:
    """Limit field ``phi0 * V(t * phi0^((p-1)/2))``."""
    if t == 0:
        return phi0.copy()
    return phi0_state(phi0, t, p, osc)[0]


def limit_growth_fit(phi0: SpectralField, s: float, t_window, p: int = 5, n_times: int = 12):
    """Log-log slope of ``||phi^(0)(t)||_{H^s}`` over ``t_window``.

    Returns ``(slope, times, norms)``.  The window must start after five
    oscillator periods at the peak amplitude.
    """
    from .harness import fit_exponent

    t0, t1 = float(t_window[0]), float(t_window[1])
    peak = float(np.abs(phi0.samples).max())
    local_period = period_V(p) / peak ** ((p - 1) / 2)
    if t0 < 5.0 * local_period or t1 <= t0:
        raise ValueError(
            f"window too short: start {t0} must exceed 5 local periods ({5 * local_period:.3g})"
        )
    osc = solve_V(p)
    times = np.geomspace(t0, t1, n_times)
    norms = np.array([sobolev_norm(phi0_field(phi0, t, p, osc), s) for t in times])
    slope, _, _ = fit_exponent(times, norms)
    return slope, times, norms
