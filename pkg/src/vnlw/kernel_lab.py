"""The unit-scale damped-wave kernel, its scaling family and decay measurements.

The unit kernel ``K`` is the inverse Fourier transform of
``exp(-|xi|/2) sin(a |xi|) / (a |xi|)`` with ``a = sqrt(3)/2``.  It factors as
a Poisson kernel at height 1/2 convolved with the normalized wave kernel at
time ``a``; :func:`explicit_formula` evaluates that convolution by quadrature
in physical space, independently of any FFT.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma

from .field_core import GridSpec, SpectralField, to_samples
from .propagator import HALF_SQRT3, mult_B

PROFILE_SCHEMA = "# vnlw-kernel-profile v1"

# fixed quadrature orders (reproducible results)
DISK_THETA_NODES = 64
DISK_PHI_NODES = 128
SPHERE_MU_NODES = 96


@dataclass(frozen=True, eq=False)
class KernelProfile:
    """Radial profile ``K(|x|)`` on the distinct lattice radii of a grid."""

    dim: int
    radii: np.ndarray
    values: np.ndarray
    t: float = 1.0
    grid: Optional[GridSpec] = None
    samples: Optional[np.ndarray] = None  # full lattice samples (FFT-free layout)
    angular_spread: float = 0.0           # max within-shell std / peak
    angular_variance: float = 0.0         # max within-shell variance / peak^2

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("kernel values must be finite")
        if self.radii[0] != 0.0 or np.any(np.diff(self.radii) <= 0):
            raise ValueError("radii must start at 0 and increase")

    @property
    def trusted_radius(self) -> float:
        """Largest radius unaffected by periodic wrap-around."""
        if self.grid is None:
            return float(self.radii[-1])
        return 0.5 * self.grid.half_width * self.t

    def __call__(self, r) -> np.ndarray:
        return np.interp(r, self.radii, self.values)

    def lebesgue_norm(self, q: float) -> float:
        if self.samples is None or self.grid is None:
            raise ValueError("profile carries no lattice samples")
        cell = self.grid.cell_volume * self.t ** self.dim
        a = np.abs(self.samples)
        if np.isinf(q):
            return float(a.max())
        return float((np.sum(a**q) * cell) ** (1.0 / q))

    def integral(self) -> float:
        if self.samples is None or self.grid is None:
            raise ValueError("profile carries no lattice samples")
        return float(np.sum(self.samples) * self.grid.cell_volume * self.t ** self.dim)


def kernel_samples(grid: GridSpec, t: float = 1.0) -> np.ndarray:
    """Lattice samples of ``K_t`` on ``grid``."""
    if t <= 0:
        raise ValueError("t must be positive")
    field = to_samples(grid, mult_B(grid.xi_magnitude, t, 1.0).astype(complex), real=False)
    return field


def _radial_profile(grid: GridSpec, samples: np.ndarray, scale: float = 1.0):
    """Average over lattice points sharing the same integer ``|j|^2``."""
    idx = np.meshgrid(*([np.arange(grid.points_per_axis) - grid.points_per_axis // 2] * grid.dim),
                      indexing="ij")
    r2 = sum(i.astype(np.int64) ** 2 for i in idx).ravel()
    vals = samples.ravel()
    order = np.argsort(r2, kind="stable")
    r2s, vs = r2[order], vals[order]
    keys, start, counts = np.unique(r2s, return_index=True, return_counts=True)
    sums = np.add.reduceat(vs, start)
    means = sums / counts
    sq = np.add.reduceat(vs**2, start) / counts
    spread = np.sqrt(np.maximum(sq - means**2, 0.0))
    radii = np.sqrt(keys.astype(float)) * grid.dx * scale
    return radii, means, spread


def unit_kernel(grid: GridSpec, t: float = 1.0) -> KernelProfile:
    """``K_t`` sampled on ``grid`` and averaged over lattice shells of equal radius."""
    raw = kernel_samples(grid, t)
    if np.abs(raw.imag).max() > 1e-10 * np.abs(raw.real).max():
        raise ValueError("kernel has a non-negligible imaginary part")
    samples = raw.real
    radii, values, spread = _radial_profile(grid, samples)
    peak = np.abs(values).max()
    return KernelProfile(grid.dim, radii, values, 1.0, grid, samples, float(spread.max() / peak),
                         float(spread.max() ** 2 / peak**2))


def scaled_kernel(profile: KernelProfile, t: float) -> KernelProfile:
    """``K_t(x) = t^(1-n) K(x/t)`` by exact rescaling of radii and values."""
    if t <= 0:
        raise ValueError("t must be positive")
    n = profile.dim
    f = t ** (1 - n)
    samples = None if profile.samples is None else profile.samples * f
    return KernelProfile(n, profile.radii * t, profile.values * f, profile.t * t,
                         profile.grid, samples, profile.angular_spread, profile.angular_variance)


# ---------------------------------------------------------------------------
# Poisson kernel and explicit convolution formula
# ---------------------------------------------------------------------------


def _check_dim(n):
    if n not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2 or 3")


@lru_cache(maxsize=None)
def poisson_constant(n: int) -> float:
    """Value at 0 of the inverse transform of ``exp(-|xi|/2)`` (radial quadrature)."""
    _check_dim(n)
    sphere_area = 2.0 * np.pi ** (n / 2) / gamma(n / 2)
    radial, _ = quad(lambda r: r ** (n - 1) * np.exp(-0.5 * r), 0.0, np.inf, epsabs=0.0, epsrel=1e-13)
    return float(sphere_area * radial / (2.0 * np.pi) ** n)


def poisson_kernel(n: int, x_mag) -> np.ndarray:
    """``c_n (1 + 4|x|^2)^(-(n+1)/2)``."""
    _check_dim(n)
    x = np.asarray(x_mag, dtype=float)
    return poisson_constant(n) * (1.0 + 4.0 * x * x) ** (-(n + 1) / 2.0)


def _explicit_1d(r):
    a = HALF_SQRT3
    c = poisson_constant(1)
    return c / (4.0 * a) * (np.arctan(2.0 * (r + a)) - np.arctan(2.0 * (r - a)))


def _explicit_2d(r):
    # weighted disk average; rho = a sin(theta) removes 1/sqrt(a^2 - rho^2)
    a = HALF_SQRT3
    th, wt = np.polynomial.legendre.leggauss(DISK_THETA_NODES)
    th = 0.25 * np.pi * (th + 1.0)
    wt = 0.25 * np.pi * wt
    phi = 2.0 * np.pi * np.arange(DISK_PHI_NODES) / DISK_PHI_NODES
    rho = a * np.sin(th)
    r = np.asarray(r, dtype=float)[..., None, None]
    d2 = r**2 + rho[:, None] ** 2 - 2.0 * r * rho[:, None] * np.cos(phi)[None, :]
    p = poisson_kernel(2, np.sqrt(d2))
    inner = p.mean(axis=-1) * 2.0 * np.pi
    return (inner * np.sin(th) * wt).sum(axis=-1) / (2.0 * np.pi)


def _explicit_3d(r):
    # sphere average; by symmetry only the polar cosine mu matters
    a = HALF_SQRT3
    mu, w = np.polynomial.legendre.leggauss(SPHERE_MU_NODES)
    r = np.asarray(r, dtype=float)[..., None]
    d = np.sqrt(np.maximum(r**2 + a * a - 2.0 * r * a * mu, 0.0))
    return 0.5 * (poisson_kernel(3, d) * w).sum(axis=-1)


def explicit_formula(n: int, r) -> np.ndarray:
    """Poisson kernel convolved with the normalized wave measure at radius ``sqrt(3)/2``."""
    _check_dim(n)
    return {1: _explicit_1d, 2: _explicit_2d, 3: _explicit_3d}[n](r)


def explicit_formula_check(n: int, grid: GridSpec, r_max: float = 5.0) -> float:
    """Sup error on ``|x| <= r_max`` between grid kernel and explicit formula, relative to the peak."""
    _check_dim(n)
    if grid.dim != n:
        raise ValueError("grid dimension does not match n")
    if grid.dx > 0.25 * HALF_SQRT3:
        raise ValueError("unresolved radius: grid spacing too coarse for sqrt(3)/2")
    prof = unit_kernel(grid)
    mask = prof.radii <= r_max
    ref = explicit_formula(n, prof.radii[mask])
    return float(np.abs(prof.values[mask] - ref).max() / np.abs(ref).max())


# ---------------------------------------------------------------------------
# Decay
# ---------------------------------------------------------------------------


def upper_envelope(values: np.ndarray) -> np.ndarray:
    """Flag points whose ``|value|`` dominates every later point."""
    a = np.abs(np.asarray(values))
    tail_max = np.maximum.accumulate(a[::-1])[::-1]
    later = np.append(tail_max[1:], 0.0)
    return a > later


def decay_fit(profile: KernelProfile, r_min: float, r_max: float) -> float:
    """Slope of ``log|K|`` against ``log(1+r)`` over envelope points in the window."""
    from .harness import fit_exponent

    if r_max > profile.trusted_radius + 1e-12:
        raise ValueError(f"r_max exceeds the trusted radius {profile.trusted_radius:g}")
    env = upper_envelope(profile.values)
    sel = env & (profile.radii >= r_min) & (profile.radii <= r_max) & (profile.values != 0)
    if sel.sum() < 3:
        raise ValueError("window contains fewer than 3 envelope points")
    slope, _, _ = fit_exponent(1.0 + profile.radii[sel], np.abs(profile.values[sel]))
    return slope


def write_profile_csv(profile: KernelProfile, path) -> None:
    env = upper_envelope(profile.values)
    with open(path, "w", newline="") as fh:
        fh.write(PROFILE_SCHEMA + "\n")
        w = csv.writer(fh)
        w.writerow(["radius", "value", "envelope_flag"])
        for r, v, e in zip(profile.radii, profile.values, env):
            w.writerow([repr(float(r)), repr(float(v)), int(e)])


def convolve_direct(kernel: np.ndarray, field: SpectralField) -> np.ndarray:
    """Periodic lattice convolution ``sum_y K(x - y) phi(y) dx^n`` by explicit summation.

    ``kernel`` holds samples at the grid points (centered layout).  This is an
    independent route to a multiplier product and is meant for small grids.
    """
    grid = field.grid
    phi = field.samples
    N = grid.points_per_axis
    # kernel value at displacement d (integer offsets) sits at index d + N/2
    kc = np.roll(kernel, [-(N // 2)] * grid.dim, axis=tuple(range(grid.dim)))  # index d -> K(d dx)
    out = np.zeros(grid.shape, dtype=np.result_type(kernel, phi))
    for shift in np.ndindex(*grid.shape):
        w = phi[shift]
        if w != 0:
            out += w * np.roll(kc, shift, axis=tuple(range(grid.dim)))
    return out * grid.cell_volume


def smoothing_ratios(grid: GridSpec, t_values) -> np.ndarray:
    """``||S(t) phi||_inf / ||phi||_2`` at the sharp datum ``phi = K_t`` for each ``t``.

    ``K_t`` maximizes ``|S(t) phi (0)|`` over the L2 unit sphere, so the ratio
    tracks the operator norm from L2 to L-infinity.
    """
    from .field_core import lebesgue_norm
    from .propagator import s_operator

    out = []
    for t in t_values:
        phi = SpectralField(grid, mult_B(grid.xi_magnitude, float(t), 1.0).astype(complex), True)
        out.append(lebesgue_norm(s_operator(phi, float(t)), np.inf) / lebesgue_norm(phi, 2))
    return np.array(out)
