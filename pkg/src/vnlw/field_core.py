"""Periodic-box discretization of R^n with spectral transforms, norms and projections.

Conventions
-----------
The box is ``[-L, L)^n`` sampled at ``x_j = -L + j*dx`` with ``dx = 2L/N``.
Frequencies are ``xi = (pi/L) * k`` for signed integers ``k`` in
``{-N/2, ..., N/2 - 1}``.  Modes are stored in numpy FFT order and hold the
approximation of the continuous Fourier transform

.. math::

    \\hat u(\\xi) = \\int u(x) e^{-i x\\cdot\\xi}\\,dx
    \\approx dx^n \\sum_j u(x_j) e^{-i x_j\\cdot\\xi},

so that Sobolev norms are ``(2 pi)^{-n} * (pi/L)^n * sum w(xi) |u_hat|^2``.
The Nyquist index ``k = -N/2`` appears exactly once per axis.

The canonical (serialization) order is the shifted order: every axis runs
from ``k = -N/2`` up to ``k = N/2 - 1`` and the lattice is flattened row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.fft as sfft
from scipy.integrate import simpson

__all__ = [
    "GridSpec",
    "SpectralField",
    "CauchyData",
    "make_grid",
    "apply_multiplier",
    "sobolev_norm",
    "sobolev_norms_batch",
    "lebesgue_norm",
    "lebesgue_norms_batch",
    "spacetime_norm",
    "smooth_cutoff",
    "lp_symbol",
    "lp_projection",
    "unit_projection",
    "modulate",
    "resample_scaled",
    "evaluate_interpolant",
    "scale_data",
    "critical_exponent",
    "dealiased_power",
    "dealiased_power_modes",
    "gaussian_field",
    "random_bandlimited_field",
    "write_field",
    "read_field",
    "FIELD_MAGIC",
]

FIELD_MAGIC = b"VNLF"
_HEADER = struct.Struct("<4sHHd")  # 16 bytes: magic, n, N, L


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on ``[-L, L)^n`` with ``N`` points per axis."""

    dim: int
    points_per_axis: int
    half_width: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.dim}")
        N = self.points_per_axis
        if int(N) != N or N < 8 or (N & (N - 1)) != 0:
            raise ValueError(f"points_per_axis must be a power of two >= 8, got {N}")
        if not np.isfinite(self.half_width) or self.half_width <= 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")

    # basic scalars ----------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dim

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def dk(self) -> float:
        """Frequency spacing ``pi / L``."""
        return np.pi / self.half_width

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def box_volume(self) -> float:
        return (2.0 * self.half_width) ** self.dim

    @property
    def nyquist(self) -> float:
        """Largest per-axis frequency magnitude ``N pi / (2 L)``."""
        return 0.5 * self.points_per_axis * self.dk

    @property
    def spectral_weight(self) -> float:
        """Factor turning ``sum |u_hat|^2`` into ``(2 pi)^{-n} int |u_hat|^2``."""
        return (2.0 * self.half_width) ** (-self.dim)

    # 1D axes -----------------------------------------------------------------
    @cached_property
    def axis_points(self) -> np.ndarray:
        return -self.half_width + self.dx * np.arange(self.points_per_axis)

    @cached_property
    def axis_indices(self) -> np.ndarray:
        """Signed integer frequency indices along one axis, FFT order."""
        N = self.points_per_axis
        return np.fft.fftfreq(N, d=1.0 / N).astype(np.int64)

    @cached_property
    def axis_frequencies(self) -> np.ndarray:
        return self.dk * self.axis_indices

    # full lattice ------------------------------------------------------------
    def _broadcast_axis(self, vec: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * self.dim
        shape[axis] = self.points_per_axis
        return vec.reshape(shape)

    @cached_property
    def coordinates(self) -> tuple:
        """Open (broadcastable) coordinate arrays, one per axis."""
        return tuple(self._broadcast_axis(self.axis_points, a) for a in range(self.dim))

    @cached_property
    def radius(self) -> np.ndarray:
        r2 = sum(c**2 for c in self.coordinates)
        return np.sqrt(np.broadcast_to(r2, self.shape))

    @cached_property
    def wavevector(self) -> tuple:
        """Open frequency component arrays (FFT order), one per axis."""
        return tuple(self._broadcast_axis(self.axis_frequencies, a) for a in range(self.dim))

    @cached_property
    def xi_magnitude(self) -> np.ndarray:
        k2 = sum(k**2 for k in self.wavevector)
        return np.sqrt(np.broadcast_to(k2, self.shape))

    @cached_property
    def phase(self) -> np.ndarray:
        """Sign pattern ``(-1)^{k_1 + ... + k_n}`` moving the origin to the box centre."""
        sign = np.where(self.axis_indices % 2 == 0, 1.0, -1.0)
        out = np.ones(self.shape)
        for a in range(self.dim):
            out = out * self._broadcast_axis(sign, a)
        return out

    @property
    def xi_max(self) -> float:
        return float(self.xi_magnitude.max())

    def canonical_indices(self) -> np.ndarray:
        """Signed multi-indices in canonical order, shape ``(N**n, n)``."""
        k = np.arange(-self.points_per_axis // 2, self.points_per_axis // 2)
        mesh = np.meshgrid(*([k] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def zeros(self, real: bool = True) -> "SpectralField":
        return SpectralField(self, np.zeros(self.shape, dtype=complex), real=real)


def make_grid(n: int, N: int, L: float) -> GridSpec:
    """Build a validated :class:`GridSpec`."""
    return GridSpec(int(n), int(N), float(L))


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


def _hermitian_flip(arr: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Return ``arr[-k]`` for an FFT-ordered array along ``axes``."""
    out = np.flip(arr, axis=tuple(axes))
    return np.roll(out, 1, axis=tuple(axes))


def to_modes(grid: GridSpec, samples: np.ndarray) -> np.ndarray:
    """Physical samples (with optional leading batch axes) to modes."""
    axes = tuple(range(-grid.dim, 0))
    return np.fft.fftn(samples, axes=axes) * (grid.cell_volume * grid.phase)


def to_samples(grid: GridSpec, modes: np.ndarray, real: bool = True) -> np.ndarray:
    """Modes (with optional leading batch axes) to physical samples."""
    axes = tuple(range(-grid.dim, 0))
    out = np.fft.ifftn(modes * grid.phase, axes=axes) / grid.cell_volume
    return out.real if real else out


class SpectralField:
    """A field on a :class:`GridSpec` stored by its Fourier modes.

    Parameters
    ----------
    grid : GridSpec
    modes : ndarray
        Complex modes in FFT order.
    real : bool
        Whether the field represents a real-valued function.  Physical samples
        of a real field are returned as a real array.
    """

    __array_priority__ = 100

    def __init__(self, grid: GridSpec, modes: np.ndarray, real: bool = True):
        modes = np.asarray(modes, dtype=complex)
        if modes.shape != grid.shape:
            raise ValueError(f"modes shape {modes.shape} does not match grid {grid.shape}")
        self.grid = grid
        self.modes = modes
        self.real = bool(real)
        self._samples: Optional[np.ndarray] = None

    @classmethod
    def from_samples(cls, grid: GridSpec, samples: np.ndarray) -> "SpectralField":
        samples = np.asarray(samples)
        real = not np.iscomplexobj(samples)
        obj = cls(grid, to_modes(grid, samples), real=real)
        return obj

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable) -> "SpectralField":
        """Sample ``func(*coords)`` on the grid."""
        vals = np.broadcast_to(func(*grid.coordinates), grid.shape)
        return cls.from_samples(grid, np.array(vals))

    @property
    def samples(self) -> np.ndarray:
        if self._samples is None:
            self._samples = to_samples(self.grid, self.modes, self.real)
        return self._samples

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.modes.copy(), self.real)

    def hermitian_defect(self) -> float:
        """Relative violation of ``u_hat(-xi) = conj(u_hat(xi))``."""
        flipped = _hermitian_flip(self.modes, range(self.grid.dim))
        scale = max(np.abs(self.modes).max(), np.finfo(float).tiny)
        return float(np.abs(self.modes - np.conj(flipped)).max() / scale)

    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, self.modes + other.modes, self.real and other.real)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, self.modes - other.modes, self.real and other.real)
        return NotImplemented

    def __mul__(self, c):
        if np.isscalar(c):
            return SpectralField(self.grid, self.modes * c, self.real and np.isreal(c))
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.modes, self.real)

    def __repr__(self):
        g = self.grid
        return f"SpectralField(n={g.dim}, N={g.points_per_axis}, L={g.half_width}, real={self.real})"


@dataclass
class CauchyData:
    """Displacement/velocity pair ``(f, g)`` with a nominal Sobolev index."""

    displacement: SpectralField
    velocity: SpectralField
    sobolev_index: float = 0.0

    def __post_init__(self):
        if self.displacement.grid != self.velocity.grid:
            raise ValueError("displacement and velocity must share one grid")

    @property
    def grid(self) -> GridSpec:
        return self.displacement.grid

    @classmethod
    def at_rest(cls, f: SpectralField, sobolev_index: float = 0.0) -> "CauchyData":
        return cls(f, f.grid.zeros(), sobolev_index)

    def scaled(self, c: float) -> "CauchyData":
        return CauchyData(self.displacement * c, self.velocity * c, self.sobolev_index)


# ---------------------------------------------------------------------------
# Multipliers and norms
# ---------------------------------------------------------------------------

Multiplier = Union[Callable, np.ndarray, float]


def _multiplier_values(grid: GridSpec, m: Multiplier, radial: bool) -> np.ndarray:
    if callable(m):
        if radial:
            vals = m(grid.xi_magnitude)
        else:
            vals = m(*grid.wavevector)
    else:
        vals = m
    vals = np.broadcast_to(np.asarray(vals), grid.shape)
    return vals


def apply_multiplier(field: SpectralField, m: Multiplier, radial: bool = True) -> SpectralField:
    """Multiply the modes of ``field`` pointwise by a Fourier multiplier.

    ``m`` is either a callable of ``|xi|`` (``radial=True``), a callable of the
    frequency components (``radial=False``), or an array of lattice values.
    """
    vals = _multiplier_values(field.grid, m, radial)
    if not np.all(np.isfinite(vals)):
        raise ValueError("multiplier is not finite at every lattice frequency")
    real = field.real
    if real and np.iscomplexobj(vals):
        flipped = _hermitian_flip(vals, range(field.grid.dim))
        scale = max(float(np.abs(vals).max()), 1.0)
        real = bool(np.abs(vals - np.conj(flipped)).max() <= 1e-14 * scale)
    return SpectralField(field.grid, field.modes * vals, real)


def _sobolev_weight(grid: GridSpec, s: float, homogeneous: bool) -> np.ndarray:
    xi = grid.xi_magnitude
    if not homogeneous:
        return (1.0 + xi**2) ** s
    w = np.zeros_like(xi)
    nz = xi > 0
    w[nz] = xi[nz] ** (2.0 * s)
    if s == 0:
        w[~nz] = 1.0
    return w


def sobolev_norms_batch(grid: GridSpec, modes: np.ndarray, s: float, homogeneous: bool = False) -> np.ndarray:
    """Sobolev norms of a stack of mode arrays (leading batch axes allowed)."""
    w = _sobolev_weight(grid, s, homogeneous)
    axes = tuple(range(-grid.dim, 0))
    return np.sqrt(grid.spectral_weight * np.sum(w * np.abs(modes) ** 2, axis=axes))


def sobolev_norm(field: SpectralField, s: float, homogeneous: bool = False) -> float:
    r"""Discrete :math:`H^s` (or :math:`\dot H^s`) norm.

    The inhomogeneous weight is ``(1 + |xi|^2)^s`` and the homogeneous weight
    is ``|xi|^{2s}``; for the homogeneous norm with ``s < 0`` the zero mode is
    left out.
    """
    if not np.all(np.isfinite(field.modes)):
        raise ValueError("field is not finite")
    return float(sobolev_norms_batch(field.grid, field.modes, s, homogeneous))


def lebesgue_norms_batch(grid: GridSpec, samples: np.ndarray, p: float) -> np.ndarray:
    axes = tuple(range(-grid.dim, 0))
    if p == np.inf:
        return np.abs(samples).max(axis=axes)
    return (grid.cell_volume * np.sum(np.abs(samples) ** p, axis=axes)) ** (1.0 / p)


def lebesgue_norm(field: SpectralField, p: float) -> float:
    """Rectangle-rule :math:`L^p` norm over the box (max of samples for ``p = inf``)."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float(lebesgue_norms_batch(field.grid, field.samples, p))


def time_integral(values: np.ndarray, times: np.ndarray) -> float:
    """Composite Simpson integral of uniformly sampled values."""
    if len(times) == 2:
        return float(0.5 * (times[1] - times[0]) * (values[0] + values[1]))
    return float(simpson(values, x=times))


def spacetime_norm(traj, q: float, r: float) -> float:
    """:math:`L^q_t L^r_x` norm of the displacement of a trajectory.

    ``traj`` must expose ``grid``, ``times`` and ``u_modes`` (shape
    ``(nt, *grid.shape)``).
    """
    times = np.asarray(traj.times)
    if len(times) < 2:
        raise ValueError("trajectory needs at least two time samples")
    u = to_samples(traj.grid, traj.u_modes, real=getattr(traj, "real", True))
    per_time = lebesgue_norms_batch(traj.grid, u, r)
    if q == np.inf:
        return float(per_time.max())
    return time_integral(per_time**q, times) ** (1.0 / q)


# ---------------------------------------------------------------------------
# Littlewood-Paley and unit-scale projections
# ---------------------------------------------------------------------------


def smoothstep(x: np.ndarray) -> np.ndarray:
    """Quintic C^2 ramp from 0 (x <= 0) to 1 (x >= 1)."""
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def smooth_cutoff(r: np.ndarray) -> np.ndarray:
    """C^2 cutoff equal to 1 for r <= 1 and to 0 for r >= 2."""
    return 1.0 - smoothstep(np.asarray(r, dtype=float) - 1.0)


def lp_symbol(r: np.ndarray) -> np.ndarray:
    """Dyadic shell symbol ``beta(r) = theta(r) - theta(2r)``, supported in [1/2, 2]."""
    r = np.asarray(r, dtype=float)
    return smooth_cutoff(r) - smooth_cutoff(2.0 * r)


def lp_projection(field: SpectralField, j: int) -> SpectralField:
    """Littlewood-Paley piece at scale ``2^j`` (support ``2^{j-1} <= |xi| <= 2^{j+1}``)."""
    scale = 2.0**j
    return apply_multiplier(field, lambda xi: lp_symbol(xi / scale))


def unit_projection(field: SpectralField, k, partition=None) -> SpectralField:
    """Unit-scale frequency piece ``F^{-1}(psi(xi - k) f_hat)``.

    ``partition`` is a :class:`vnlw.randomization.UnitPartition` built for
    the field's grid.
    """
    if partition is None:
        raise ValueError("partition not initialized; build one with build_partition(grid)")
    if partition.grid != field.grid:
        raise ValueError("partition was built for a different grid")
    w = partition.weights(k)
    return SpectralField(field.grid, field.modes * w, field.real)


def modulate(field: SpectralField, k) -> SpectralField:
    """Multiply by ``exp(-i k.x)``, i.e. shift the spectrum by ``-k``.

    ``k`` must be a lattice frequency (integer multiple of ``pi/L`` per axis).
    """
    grid = field.grid
    k = np.atleast_1d(np.asarray(k, dtype=float))
    shift = k / grid.dk
    ishift = np.rint(shift).astype(int)
    if np.any(np.abs(shift - ishift) > 1e-9):
        raise ValueError("modulation frequency is not on the lattice")
    modes = np.roll(field.modes, tuple(-ishift), axis=tuple(range(grid.dim)))
    return SpectralField(grid, modes, real=bool(np.all(ishift == 0)) and field.real)


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------


def critical_exponent(n: int, p: int) -> float:
    """Scaling-critical Sobolev index ``n/2 - 2/(p-1)``."""
    return n / 2.0 - 2.0 / (p - 1)


def resample_scaled(field: SpectralField, mu: float, tol: float = 1e-6) -> SpectralField:
    """Band-limited evaluation of ``x -> f(mu x)`` on the same grid.

    The trigonometric interpolant of ``f`` is evaluated exactly at the points
    ``mu * x_j``; points that leave the box (``mu > 1``) are set to zero.
    Raises if the compressed spectrum leaves the Nyquist band (``mu > 1``) or
    if the stretched field does not fit in the box (``mu < 1``), at relative
    level ``tol``.
    """
    if mu <= 0:
        raise ValueError("scale factor must be positive")
    grid = field.grid
    if mu == 1.0:
        return field.copy()
    total = np.sqrt(np.sum(np.abs(field.modes) ** 2))
    if total == 0:
        return field.copy()
    if mu > 1.0:
        outside = np.zeros(grid.shape, dtype=bool)
        for comp in grid.wavevector:
            outside = outside | (np.abs(comp) * mu > grid.nyquist - 0.5 * grid.dk)
        lost = np.sqrt(np.sum(np.abs(field.modes[outside]) ** 2)) / total
        if lost > tol:
            raise ValueError(
                f"rescaled spectrum exceeds the Nyquist band (relative tail {lost:.2e})"
            )
    else:
        inside = np.ones(grid.shape, dtype=bool)
        for c in grid.coordinates:
            inside = inside & (np.abs(c) < mu * grid.half_width)
        s = field.samples
        lost = np.sqrt(np.sum(np.abs(s[~inside]) ** 2) / max(np.sum(np.abs(s) ** 2), 1e-300))
        if lost > tol:
            raise ValueError(f"rescaled field exceeds the box (relative tail {lost:.2e})")

    vals = evaluate_interpolant(field, mu * grid.axis_points)
    return SpectralField.from_samples(grid, vals)


def evaluate_interpolant(field: SpectralField, y: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``field`` on the tensor grid ``y^n``.

    Points with ``|y| >= L`` on any axis lie outside the box and evaluate to
    zero.  The Nyquist term is split symmetrically so real data stay real.
    """
    grid = field.grid
    L = grid.half_width
    xi = grid.axis_frequencies
    y = np.asarray(y, dtype=float)
    mat = np.exp(1j * np.outer(y, xi)) / (2.0 * L)
    ny = grid.axis_indices == -grid.points_per_axis // 2
    mat[:, ny] = np.cos(np.outer(y, xi[ny])) / (2.0 * L)
    mat[np.abs(y) >= L, :] = 0.0
    vals = field.modes
    for a in range(grid.dim):
        vals = np.moveaxis(np.tensordot(mat, vals, axes=([1], [a])), 0, a)
    return vals.real if field.real else vals


def scale_data(data: CauchyData, lam: float, p: int, tol: float = 1e-6) -> CauchyData:
    """Apply the equation's scaling map ``(lam^a f(lam x), lam^{a+1} g(lam x))``, ``a = 2/(p-1)``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    a = 2.0 / (p - 1)
    f = resample_scaled(data.displacement, lam, tol) * lam**a
    g = resample_scaled(data.velocity, lam, tol) * lam ** (a + 1.0)
    return CauchyData(f, g, data.sobolev_index)


# ---------------------------------------------------------------------------
# Dealiased powers
# ---------------------------------------------------------------------------


def _pad_index(grid: GridSpec, M: int):
    ks = grid.axis_indices
    keep = ks != -grid.points_per_axis // 2
    src = np.nonzero(keep)[0]
    dst = ks[keep] % M
    return src, dst, ks[keep]


def dealiased_power_modes(grid: GridSpec, modes: np.ndarray, p: int, factor: int,
                          real: bool = True) -> np.ndarray:
    """Modes of ``u^p`` computed on a zero-padded grid and truncated back.

    ``modes`` may carry leading batch axes.  The Nyquist index is dropped in
    both directions.
    """
    n = grid.dim
    N = grid.points_per_axis
    M = factor * N
    src, dst, ks = _pad_index(grid, M)
    sign = np.where(ks % 2 == 0, 1.0, -1.0)
    batch = modes.shape[:-n]
    signs = np.ones((len(src),) * n)
    for a in range(n):
        shape = [1] * n
        shape[a] = len(src)
        signs = signs * sign.reshape(shape)
    bsl = (Ellipsis,)
    dxp = 2.0 * grid.half_width / M
    axes = tuple(range(-n, 0))
    if real:
        return _real_power(grid, modes, p, M, src, dst, ks, signs, dxp, axes)
    padded = np.zeros(batch + (M,) * n, dtype=complex)
    padded[bsl + np.ix_(*([dst] * n))] = modes[bsl + np.ix_(*([src] * n))] * signs
    phys = sfft.ifftn(padded, axes=axes) / dxp**n
    back = sfft.fftn(phys**p, axes=axes) * dxp**n
    out = np.zeros(batch + grid.shape, dtype=complex)
    out[bsl + np.ix_(*([src] * n))] = back[bsl + np.ix_(*([dst] * n))] * signs
    return out


def _real_power(grid, modes, p, M, src, dst, ks, signs, dxp, axes):
    # half-spectrum transforms along the last axis; the negative half is restored by symmetry
    n = grid.dim
    half = ks >= 0
    src_h, dst_h = src[half], dst[half]
    idx_in = [src] * (n - 1) + [src_h]
    idx_pad = [dst] * (n - 1) + [dst_h]
    sg = signs[(Ellipsis,) + (slice(None),) * (n - 1) + (half,)]
    batch = modes.shape[:-n]
    padded = np.zeros(batch + (M,) * (n - 1) + (M // 2 + 1,), dtype=complex)
    padded[(Ellipsis,) + np.ix_(*idx_pad)] = modes[(Ellipsis,) + np.ix_(*idx_in)] * sg
    phys = sfft.irfftn(padded, s=(M,) * n, axes=axes) / dxp**n
    back = sfft.rfftn(phys**p, axes=axes) * dxp**n
    out = np.zeros(batch + grid.shape, dtype=complex)
    out[(Ellipsis,) + np.ix_(*idx_in)] = back[(Ellipsis,) + np.ix_(*idx_pad)] * sg
    mirrored = np.conj(_hermitian_flip(out, axes))
    neg = grid.axis_indices < 0
    out[..., neg] = mirrored[..., neg]
    nyq = grid.axis_indices == -grid.points_per_axis // 2
    for a in axes:
        sl = [slice(None)] * out.ndim
        sl[a] = nyq
        out[tuple(sl)] = 0.0
    return out


def dealiased_power(field: SpectralField, p: int, factor: Optional[int] = None) -> SpectralField:
    """Pseudo-spectral ``u^p`` with zero padding by ``factor`` (default ``ceil((p+1)/2)``)."""
    if factor is None:
        factor = -(-(p + 1) // 2)
    modes = dealiased_power_modes(field.grid, field.modes, p, factor, field.real)
    return SpectralField(field.grid, modes, field.real)


# ---------------------------------------------------------------------------
# Sample constructors
# ---------------------------------------------------------------------------


def gaussian_field(grid: GridSpec, width: float = 1.0, amplitude: float = 1.0,
                   center=None) -> SpectralField:
    """``amplitude * exp(-|x - center|^2 / (2 width^2))``."""
    if center is None:
        center = np.zeros(grid.dim)
    r2 = sum((c - x0) ** 2 for c, x0 in zip(grid.coordinates, center))
    vals = amplitude * np.exp(-np.broadcast_to(r2, grid.shape) / (2.0 * width**2))
    return SpectralField.from_samples(grid, np.array(vals))


def random_bandlimited_field(grid: GridSpec, kmax: float, rng: np.random.Generator,
                             decay: float = 0.0) -> SpectralField:
    """Real random field with modes supported in ``|xi| <= kmax``.

    Mode amplitudes are complex normal times ``(1 + |xi|)^{-decay}``; the
    result is Hermitian symmetrized so that it is real-valued.
    """
    xi = grid.xi_magnitude
    z = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    z = z * (1.0 + xi) ** (-decay) * (xi <= kmax)
    for a in range(grid.dim):
        ny = grid.axis_indices == -grid.points_per_axis // 2
        idx = [slice(None)] * grid.dim
        idx[a] = ny
        z[tuple(idx)] = 0.0
    z = 0.5 * (z + np.conj(_hermitian_flip(z, range(grid.dim))))
    return SpectralField(grid, z * grid.box_volume ** 0.5, real=True)


# ---------------------------------------------------------------------------
# Binary dumps
# ---------------------------------------------------------------------------


def _canonical(grid: GridSpec, modes: np.ndarray) -> np.ndarray:
    axes = tuple(range(-grid.dim, 0))
    return np.fft.fftshift(modes, axes=axes)


def _from_canonical(grid: GridSpec, modes: np.ndarray) -> np.ndarray:
    axes = tuple(range(-grid.dim, 0))
    return np.fft.ifftshift(modes, axes=axes)


def pack_header(grid: GridSpec) -> bytes:
    return _HEADER.pack(FIELD_MAGIC, grid.dim, grid.points_per_axis, grid.half_width)


def unpack_header(buf: bytes) -> GridSpec:
    magic, n, N, L = _HEADER.unpack(buf[: _HEADER.size])
    if magic != FIELD_MAGIC:
        raise ValueError("not a field dump (bad magic)")
    return make_grid(n, N, L)


def modes_to_bytes(grid: GridSpec, modes: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(_canonical(grid, modes)).astype("<c16")
    return arr.tobytes(order="C")


def modes_from_bytes(grid: GridSpec, buf: bytes, count: int = 1) -> np.ndarray:
    arr = np.frombuffer(buf, dtype="<c16", count=count * grid.size)
    arr = arr.reshape((count,) + grid.shape) if count > 1 else arr.reshape(grid.shape)
    return _from_canonical(grid, arr.astype(complex))


def write_field(path, field: SpectralField) -> None:
    """Write modes as little-endian float64 (re, im) pairs in canonical order after a 16-byte header."""
    with open(path, "wb") as fh:
        fh.write(pack_header(field.grid))
        fh.write(modes_to_bytes(field.grid, field.modes))


def read_field(path, real: bool = True) -> SpectralField:
    with open(path, "rb") as fh:
        buf = fh.read()
    grid = unpack_header(buf)
    modes = modes_from_bytes(grid, buf[_HEADER.size:])
    return SpectralField(grid, modes, real=real)
