"""Exact per-mode solution operators of the linear viscous wave equation.

Each Fourier mode of

.. math::

    u_{tt} - \\nu^2 \\Delta u + \\nu \\sqrt{-\\Delta}\\, u_t = F

obeys a damped oscillator with rate ``a = nu |xi|`` and characteristic roots
``a (-1 +- i sqrt(3)) / 2``.  With ``w = sqrt(3) a / 2`` the homogeneous
solution is ``u_hat = A f_hat + B g_hat`` where

* ``A = exp(-a t/2) (cos(w t) + sin(w t) / sqrt(3))``
* ``B = exp(-a t/2) sin(w t) / w``  (``B = t`` at ``a = 0``)

and the time derivatives are ``A' = -a^2 B`` and
``B' = exp(-a t/2) cos(w t) - (a/2) B``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .field_core import (
    CauchyData,
    GridSpec,
    SpectralField,
    lebesgue_norms_batch,
    lp_symbol,
    modes_from_bytes,
    modes_to_bytes,
    pack_header,
    sobolev_norm,
    sobolev_norms_batch,
    time_integral,
    to_samples,
    unpack_header,
)

SQRT3 = np.sqrt(3.0)
HALF_SQRT3 = 0.5 * SQRT3
SINC_SERIES_THRESHOLD = 1e-4


@dataclass(frozen=True)
class PropagatorParams:
    """Viscosity/dispersion parameter ``nu`` and the grid it acts on."""

    nu: float
    grid: GridSpec

    def __post_init__(self):
        if not (self.nu > 0):
            raise ValueError(f"nu must be positive, got {self.nu}")

    @property
    def rate(self) -> np.ndarray:
        """Per-mode damping scale ``nu |xi|``."""
        return self.nu * self.grid.xi_magnitude


# ---------------------------------------------------------------------------
# Scalar/vectorized multipliers
# ---------------------------------------------------------------------------


def _sinc(z):
    """``sin(z)/z`` with a three-term series below the threshold."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < SINC_SERIES_THRESHOLD
    zs = np.where(small, 1.0, z)
    direct = np.sin(zs) / zs
    z2 = z * z
    series = 1.0 - z2 / 6.0 + z2 * z2 / 120.0
    return np.where(small, series, direct)


def mult_A(xi_mag, t, nu=1.0):
    """Displacement multiplier ``A(|xi|, t)``."""
    a = nu * np.asarray(xi_mag, dtype=float)
    w = HALF_SQRT3 * a * t
    return np.exp(-0.5 * a * t) * (np.cos(w) + np.sin(w) / SQRT3)


def mult_B(xi_mag, t, nu=1.0):
    """Velocity multiplier ``B(|xi|, t)``; equals ``t`` at zero frequency."""
    a = nu * np.asarray(xi_mag, dtype=float)
    t = np.asarray(t, dtype=float)
    return np.exp(-0.5 * a * t) * t * _sinc(HALF_SQRT3 * a * t)


def mult_A_dot(xi_mag, t, nu=1.0):
    """Closed-form ``dA/dt = -(nu |xi|)^2 B``."""
    a = nu * np.asarray(xi_mag, dtype=float)
    return -(a**2) * mult_B(xi_mag, t, nu)


def mult_B_dot(xi_mag, t, nu=1.0):
    """Closed-form ``dB/dt = exp(-a t/2) cos(w t) - (a/2) B``."""
    a = nu * np.asarray(xi_mag, dtype=float)
    w = HALF_SQRT3 * a * t
    return np.exp(-0.5 * a * t) * np.cos(w) - 0.5 * a * mult_B(xi_mag, t, nu)


def fundamental_matrix(xi_mag, t, nu=1.0) -> np.ndarray:
    """Per-mode 2x2 matrix mapping ``(u, u_t)(0)`` to ``(u, u_t)(t)``; shape ``(..., 2, 2)``."""
    A = mult_A(xi_mag, t, nu)
    B = mult_B(xi_mag, t, nu)
    Ad = mult_A_dot(xi_mag, t, nu)
    Bd = mult_B_dot(xi_mag, t, nu)
    A, B, Ad, Bd = np.broadcast_arrays(A, B, Ad, Bd)
    return np.stack([np.stack([A, B], -1), np.stack([Ad, Bd], -1)], -2)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Uniformly sampled sequence of states ``(u, u_t)`` stored as mode stacks.

    ``u_modes`` and ``ut_modes`` have shape ``(nt, *grid.shape)``.  A source
    history (for Duhamel integrals) is a trajectory whose ``ut_modes`` is None.
    ``outcome`` is ``"ok"`` or a typed early-stop reason such as ``"blowup"``.
    """

    params: PropagatorParams
    times: np.ndarray
    u_modes: np.ndarray
    ut_modes: Optional[np.ndarray] = None
    real: bool = True
    outcome: str = "ok"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or len(self.times) == 0:
            raise ValueError("trajectory needs at least one time sample")
        if self.u_modes.shape != (len(self.times),) + self.grid.shape:
            raise ValueError("u_modes shape does not match times and grid")
        if self.ut_modes is not None and self.ut_modes.shape != self.u_modes.shape:
            raise ValueError("ut_modes shape does not match u_modes")
        if len(self.times) > 2:
            steps = np.diff(self.times)
            if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(self.times[-1])):
                raise ValueError("trajectory times must be uniformly spaced")

    @property
    def grid(self) -> GridSpec:
        return self.params.grid

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> Tuple[SpectralField, Optional[SpectralField]]:
        u = SpectralField(self.grid, self.u_modes[i], self.real)
        ut = None if self.ut_modes is None else SpectralField(self.grid, self.ut_modes[i], self.real)
        return u, ut

    @property
    def states(self):
        return [self.state(i) for i in range(len(self.times))]

    def u_samples(self) -> np.ndarray:
        return to_samples(self.grid, self.u_modes, self.real)

    def index_of(self, t: float) -> int:
        """Index of the sample at time ``t``; raises if ``t`` is not a sample time."""
        scale = max(1.0, abs(self.times[-1]))
        if t > self.times[-1] + 1e-9 * scale or t < -1e-12:
            raise ValueError(f"t={t} beyond source coverage [0, {self.times[-1]}]")
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * scale:
            raise ValueError(f"t={t} is not on the source time grid")
        return i

    def truncated(self, t: float) -> "Trajectory":
        i = self.index_of(t)
        ut = None if self.ut_modes is None else self.ut_modes[: i + 1]
        return Trajectory(self.params, self.times[: i + 1], self.u_modes[: i + 1], ut,
                          self.real, self.outcome, dict(self.info))

    def sobolev_norms(self, s: float, homogeneous: bool = False, velocity: bool = False) -> np.ndarray:
        modes = self.ut_modes if velocity else self.u_modes
        return sobolev_norms_batch(self.grid, modes, s, homogeneous)

    def lebesgue_norms(self, r: float) -> np.ndarray:
        return lebesgue_norms_batch(self.grid, self.u_samples(), r)

    # binary dump: field header, uint64 count, times, u stack, optional ut stack
    def to_bytes(self) -> bytes:
        nt = len(self.times)
        parts = [pack_header(self.grid), struct.pack("<QB", nt, self.ut_modes is not None)]
        parts.append(self.times.astype("<f8").tobytes())
        parts.append(modes_to_bytes(self.grid, self.u_modes))
        if self.ut_modes is not None:
            parts.append(modes_to_bytes(self.grid, self.ut_modes))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes, nu: float = 1.0) -> "Trajectory":
        grid = unpack_header(buf)
        off = 16
        nt, has_ut = struct.unpack_from("<QB", buf, off)
        off += 9
        times = np.frombuffer(buf, dtype="<f8", count=nt, offset=off).astype(float)
        off += 8 * nt
        block = 16 * grid.size * nt
        u = modes_from_bytes(grid, buf[off: off + block], nt).reshape((nt,) + grid.shape)
        off += block
        ut = None
        if has_ut:
            ut = modes_from_bytes(grid, buf[off: off + block], nt).reshape((nt,) + grid.shape)
        return cls(PropagatorParams(nu, grid), times, u, ut)


def source_history(params: PropagatorParams, times, modes, real: bool = True) -> Trajectory:
    """Wrap a stack of source modes ``F(t_i)`` as a trajectory."""
    return Trajectory(params, np.asarray(times, dtype=float), np.asarray(modes, dtype=complex), None, real)


# ---------------------------------------------------------------------------
# Homogeneous evolution
# ---------------------------------------------------------------------------


def evolve_homogeneous(data: CauchyData, t: float, params: PropagatorParams):
    """Exact ``(u(t), u_t(t))`` for data ``(f, g)``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if data.grid != params.grid:
        raise ValueError("data and propagator grids differ")
    if t == 0:
        return data.displacement.copy(), data.velocity.copy()
    xi = params.grid.xi_magnitude
    nu = params.nu
    f, g = data.displacement.modes, data.velocity.modes
    A, B = mult_A(xi, t, nu), mult_B(xi, t, nu)
    Ad, Bd = mult_A_dot(xi, t, nu), mult_B_dot(xi, t, nu)
    real = data.displacement.real and data.velocity.real
    u = SpectralField(params.grid, A * f + B * g, real)
    ut = SpectralField(params.grid, Ad * f + Bd * g, real)
    return u, ut


def homogeneous_trajectory(data: CauchyData, times, params: PropagatorParams) -> Trajectory:
    """Exact homogeneous evolution sampled at ``times`` (vectorized over time)."""
    times = np.asarray(times, dtype=float)
    xi = params.grid.xi_magnitude[None]
    t = times.reshape((-1,) + (1,) * params.grid.dim)
    nu = params.nu
    f = data.displacement.modes[None]
    g = data.velocity.modes[None]
    u = mult_A(xi, t, nu) * f + mult_B(xi, t, nu) * g
    ut = mult_A_dot(xi, t, nu) * f + mult_B_dot(xi, t, nu) * g
    real = data.displacement.real and data.velocity.real
    return Trajectory(params, times, u, ut, real)


def freq_localized_evolution(data: CauchyData, t: float, j: int, params: PropagatorParams):
    """Homogeneous evolution restricted to the dyadic shell ``|xi| ~ 2^j``."""
    if 2.0 ** (j + 1) > params.grid.nyquist:
        raise ValueError(f"dyadic shell 2^{j} exceeds the grid band")
    u, ut = evolve_homogeneous(data, t, params)
    beta = lp_symbol(params.grid.xi_magnitude / 2.0**j)
    return (SpectralField(u.grid, u.modes * beta, u.real),
            SpectralField(ut.grid, ut.modes * beta, ut.real))


def s_operator(phi: SpectralField, t: float) -> SpectralField:
    """Smoothing operator ``S(t)``: multiplier ``B(|xi|, t)`` at ``nu = 1``."""
    if t <= 0:
        raise ValueError("t must be positive")
    m = mult_B(phi.grid.xi_magnitude, t, 1.0)
    return SpectralField(phi.grid, phi.modes * m, phi.real)


# ---------------------------------------------------------------------------
# Duhamel integral
# ---------------------------------------------------------------------------


def duhamel_history(F: Trajectory, params: PropagatorParams):
    """Duhamel solution ``(u, u_t)`` at every sample time of the source history.

    Per mode this is composite Simpson applied to
    ``int_0^t (B, B')(t - tau) F(tau) d tau``.  Even sample indices use plain
    Simpson; odd indices treat the first interval with the three-point rule on
    ``[0, h]`` and use Simpson afterwards.  Both chains advance by the exact
    fundamental matrix over ``2h``, which reproduces composite Simpson exactly
    because the kernel columns satisfy ``M(2h) K(s) = K(s + 2h)``.
    """
    if F.grid != params.grid:
        raise ValueError("source grid mismatch")
    nt = len(F.times)
    src = F.u_modes
    U = np.zeros_like(src, dtype=complex)
    V = np.zeros_like(src, dtype=complex)
    if nt == 1:
        return U, V
    h = F.dt
    xi = params.grid.xi_magnitude
    nu = params.nu

    def kernel(t):
        return mult_B(xi, t, nu), mult_B_dot(xi, t, nu)

    B0, C0 = kernel(0.0)
    B1, C1 = kernel(h)
    B2, C2 = kernel(2 * h)
    A2, Ad2 = mult_A(xi, 2 * h, nu), mult_A_dot(xi, 2 * h, nu)
    w = h / 3.0

    def advance(u, v, fa, fb, fc):
        un = A2 * u + B2 * v + w * (B2 * fa + 4.0 * B1 * fb + B0 * fc)
        vn = Ad2 * u + C2 * v + w * (C2 * fa + 4.0 * C1 * fb + C0 * fc)
        return un, vn

    for i in range(2, nt, 2):
        U[i], V[i] = advance(U[i - 2], V[i - 2], src[i - 2], src[i - 1], src[i])

    if nt == 2:
        U[1] = 0.5 * h * (B1 * src[0] + B0 * src[1])
        V[1] = 0.5 * h * (C1 * src[0] + C0 * src[1])
        return U, V
    Bm, Cm = mult_B(xi, -h, nu), mult_B_dot(xi, -h, nu)
    U[1] = h / 12.0 * (5.0 * B1 * src[0] + 8.0 * B0 * src[1] - Bm * src[2])
    V[1] = h / 12.0 * (5.0 * C1 * src[0] + 8.0 * C0 * src[1] - Cm * src[2])
    for i in range(3, nt, 2):
        U[i], V[i] = advance(U[i - 2], V[i - 2], src[i - 2], src[i - 1], src[i])
    return U, V


def duhamel(F: Trajectory, t: float, params: PropagatorParams):
    """Duhamel term and its time derivative at a sample time ``t`` of ``F``."""
    if F.grid != params.grid:
        raise ValueError("source grid mismatch")
    i = F.index_of(t)
    U, V = duhamel_history(F.truncated(F.times[i]), params)
    return (SpectralField(F.grid, U[i], F.real), SpectralField(F.grid, V[i], F.real))


def duhamel_trajectory(F: Trajectory, params: PropagatorParams) -> Trajectory:
    U, V = duhamel_history(F, params)
    return Trajectory(params, F.times.copy(), U, V, F.real)


# ---------------------------------------------------------------------------
# Exponent conditions
# ---------------------------------------------------------------------------


def _inv(x) -> float:
    return 0.0 if x == np.inf else 1.0 / x


def gap_condition(q, r, s, n, tol: float = 1e-12) -> bool:
    """``1/q + n/r = n/2 - s``."""
    return abs(_inv(q) + n * _inv(r) - (n / 2.0 - s)) <= tol


def dual_gap_condition(q_tilde, r_tilde, s, n, tol: float = 1e-12) -> bool:
    """Inhomogeneous variant ``n/2 - s = 1/q' + n/r' - 2`` with dual exponents."""
    qp = 1.0 - _inv(q_tilde)
    rp = 1.0 - _inv(r_tilde)
    return abs(qp + n * rp - 2.0 - (n / 2.0 - s)) <= tol


def sigma_admissible(q, r, sigma, tol: float = 1e-12) -> bool:
    """``q, r >= 2``, ``2/q + 2 sigma/r <= sigma`` and not the endpoint ``(2, inf, 1)``."""
    if q < 2 or r < 2:
        return False
    if q == 2 and r == np.inf and abs(sigma - 1.0) <= tol:
        return False
    return 2.0 * _inv(q) + 2.0 * sigma * _inv(r) <= sigma + tol


# ---------------------------------------------------------------------------
# Estimate ratios
# ---------------------------------------------------------------------------


def _lq_lr(grid: GridSpec, times: np.ndarray, modes: np.ndarray, q, r, real=True) -> float:
    per_time = lebesgue_norms_batch(grid, to_samples(grid, modes, real), r)
    if q == np.inf:
        return float(per_time.max())
    return time_integral(per_time**q, times) ** (1.0 / q)


def strichartz_ratio(data: CauchyData, T: float, q, r, s, params: Optional[PropagatorParams] = None,
                     nt: int = 129) -> float:
    """Homogeneous estimate ratio.

    ``(||u||_{L^q_t L^r_x} + ||u(T)||_{H^s} + ||u_t(T)||_{H^{s-1}})
    / (||f||_{H^s} + ||g||_{H^{s-1}})`` with homogeneous Sobolev norms.
    """
    n = data.grid.dim
    if not gap_condition(q, r, s, n):
        raise ValueError(f"gap condition fails for (q, r, s, n) = ({q}, {r}, {s}, {n})")
    if params is None:
        params = PropagatorParams(1.0, data.grid)
    den = sobolev_norm(data.displacement, s, True) + sobolev_norm(data.velocity, s - 1, True)
    if den == 0:
        raise ValueError("zero data")
    times = np.linspace(0.0, T, nt)
    traj = homogeneous_trajectory(data, times, params)
    num = _lq_lr(data.grid, times, traj.u_modes, q, r, traj.real)
    num += sobolev_norms_batch(data.grid, traj.u_modes[-1], s, True)
    num += sobolev_norms_batch(data.grid, traj.ut_modes[-1], s - 1, True)
    return float(num / den)


def duhamel_c0hs_ratio(F: Trajectory, T: float, s, q_tilde, r_tilde,
                       params: Optional[PropagatorParams] = None) -> float:
    """``||Duhamel(F)||_{C^0([0,T]; H^s)} / ||F||_{L^{q'}_t L^{r'}_x}``."""
    n = F.grid.dim
    if not (0 < T <= 1):
        raise ValueError("T must lie in (0, 1]")
    if not dual_gap_condition(q_tilde, r_tilde, s, n):
        raise ValueError("dual gap condition fails")
    if params is None:
        params = F.params
    G = F.truncated(T)
    qp = 1.0 / (1.0 - _inv(q_tilde))
    rp = 1.0 / (1.0 - _inv(r_tilde))
    den = _lq_lr(G.grid, G.times, G.u_modes, qp, rp, G.real)
    if den == 0:
        raise ValueError("zero source")
    U, _ = duhamel_history(G, params)
    num = sobolev_norms_batch(G.grid, U, s).max()
    return float(num / den)
