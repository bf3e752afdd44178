"""Time stepping, Picard iteration and scaling experiments for

.. math::

    u_{tt} - \\nu^2 \\Delta u + \\nu \\sqrt{-\\Delta}\\, u_t + u^p = 0 .

The stepper is Strang splitting: an exact half step of the linear flow, a
kick ``u_t -= dt * u^p`` computed pseudo-spectrally on a zero-padded grid,
and another exact linear half step.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .field_core import (
    CauchyData,
    GridSpec,
    SpectralField,
    critical_exponent,
    dealiased_power_modes,
    evaluate_interpolant,
    lebesgue_norms_batch,
    make_grid,
    sobolev_norm,
    sobolev_norms_batch,
    time_integral,
    to_samples,
)
from .limit_ode import phi0_state, solve_V
from .propagator import (
    PropagatorParams,
    Trajectory,
    duhamel_history,
    mult_A,
    mult_A_dot,
    mult_B,
    mult_B_dot,
)

MAX_STIFFNESS = 10.0


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the nonlinear solver.

    ``ceiling`` bounds the ``H^diagnostic_k`` norm; crossing it stops the run
    with outcome ``"ceiling"``.  ``nonlinear=False`` switches the kick off.
    """

    p: int = 5
    nu: float = 1.0
    dt: float = 1e-2
    dealias_factor: Optional[int] = None
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    ceiling: float = 1e8
    diagnostic_k: int = 1
    nonlinear: bool = True

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 3 or self.p % 2 == 0:
            raise ValueError(f"p must be an odd integer >= 3, got {self.p}")
        if not (0 < self.nu <= 1):
            raise ValueError(f"nu must lie in (0, 1], got {self.nu}")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.dealias_factor is not None and self.dealias_factor < self.min_dealias:
            raise ValueError(f"dealias_factor must be >= {self.min_dealias}")

    @property
    def min_dealias(self) -> int:
        return -(-(self.p + 1) // 2)

    @property
    def padding(self) -> int:
        return self.dealias_factor if self.dealias_factor is not None else self.min_dealias

    def check_grid(self, grid: GridSpec):
        if self.dt * self.nu * grid.xi_max > MAX_STIFFNESS:
            raise ValueError(
                f"dt * nu * |xi|max = {self.dt * self.nu * grid.xi_max:.3g} exceeds {MAX_STIFFNESS}"
            )


# ---------------------------------------------------------------------------
# Energies and norms
# ---------------------------------------------------------------------------


def _multi_index_weight(grid: GridSpec, k: int) -> np.ndarray:
    """``sum_{|alpha| <= k} prod_i xi_i^(2 alpha_i)`` on the lattice."""
    comps = [np.broadcast_to(c, grid.shape) ** 2 for c in grid.wavevector]
    w = np.zeros(grid.shape)
    for alpha in itertools.product(range(k + 1), repeat=grid.dim):
        if sum(alpha) <= k:
            term = np.ones(grid.shape)
            for c, a in zip(comps, alpha):
                term = term * c**a
            w = w + term
    return w


def energy_nu_k(state, nu: float, k: int = 0) -> float:
    """``sum_{|alpha|<=k} (1/2 ||d_t d^alpha u||^2 + nu^2/2 ||grad d^alpha u||^2)``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    u, ut = state
    grid = u.grid
    w = _multi_index_weight(grid, k)
    xi2 = grid.xi_magnitude**2
    dens = 0.5 * np.abs(ut.modes) ** 2 + 0.5 * nu**2 * xi2 * np.abs(u.modes) ** 2
    return float(grid.spectral_weight * np.sum(w * dens))


def full_energy(state, nu: float, p: int) -> float:
    """Quadratic energy plus the potential ``int u^(p+1)/(p+1)``."""
    u = state[0]
    pot = u.grid.cell_volume * np.sum(u.samples ** (p + 1)) / (p + 1)
    return energy_nu_k(state, nu, 0) + float(pot)


def xt_norm(grid: GridSpec, times: np.ndarray, u_modes: np.ndarray, real: bool = True) -> float:
    """``max_t ||u||_{H^{1/2}} + ||u||_{L^6_t L^6_x}`` on the stored samples."""
    c0 = sobolev_norms_batch(grid, u_modes, 0.5).max()
    per_t = lebesgue_norms_batch(grid, to_samples(grid, u_modes, real), 6)
    l6 = time_integral(per_t**6, times) ** (1.0 / 6.0)
    return float(c0 + l6)


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


class StrangStepper:
    """Caches the half-step linear propagator for one grid and configuration."""

    def __init__(self, grid: GridSpec, cfg: SolverConfig, dt: Optional[float] = None):
        self.grid = grid
        self.cfg = cfg
        self.dt = cfg.dt if dt is None else dt
        xi = grid.xi_magnitude
        h = 0.5 * self.dt
        nu = cfg.nu
        self.A, self.B = mult_A(xi, h, nu), mult_B(xi, h, nu)
        self.Ad, self.Bd = mult_A_dot(xi, h, nu), mult_B_dot(xi, h, nu)

    def half_linear(self, u, ut):
        return self.A * u + self.B * ut, self.Ad * u + self.Bd * ut

    def kick(self, u, ut, real=True):
        if not self.cfg.nonlinear:
            return ut
        pw = dealiased_power_modes(self.grid, u, self.cfg.p, self.cfg.padding, real)
        return ut - self.dt * pw

    def __call__(self, u, ut, real=True):
        # overflow is detected by the caller and reported as a blowup outcome
        with np.errstate(over="ignore", invalid="ignore"):
            u, ut = self.half_linear(u, ut)
            ut = self.kick(u, ut, real)
            return self.half_linear(u, ut)


def step(state, cfg: SolverConfig, dt: Optional[float] = None):
    """One Strang step of size ``dt`` (default ``cfg.dt``) for ``(u, u_t)`` fields."""
    u, ut = state
    stepper = StrangStepper(u.grid, cfg, dt)
    un, utn = stepper(u.modes, ut.modes, u.real)
    if not (np.all(np.isfinite(un)) and np.all(np.isfinite(utn))):
        raise FloatingPointError("non-finite state")
    return SpectralField(u.grid, un, u.real), SpectralField(u.grid, utn, u.real)


def solve_ivp(data: CauchyData, T: float, cfg: SolverConfig, save_every: int = 1) -> Trajectory:
    """Integrate to time ``T`` (a multiple of ``cfg.dt``).

    Returns a trajectory sampled every ``save_every`` steps.  Non-finite
    states stop the run with outcome ``"blowup"``; crossing the diagnostic
    ceiling stops it with outcome ``"ceiling"``.
    """
    grid = data.grid
    cfg.check_grid(grid)
    ratio = T / cfg.dt
    nsteps = int(round(ratio))
    if abs(ratio - nsteps) > 1e-8 * max(1.0, ratio):
        raise ValueError("T must be an integer multiple of dt")
    if nsteps % save_every != 0:
        raise ValueError("number of steps must be a multiple of save_every")
    params = PropagatorParams(cfg.nu, grid)
    stepper = StrangStepper(grid, cfg)
    real = data.displacement.real and data.velocity.real
    nsave = nsteps // save_every + 1
    U = np.empty((nsave,) + grid.shape, dtype=complex)
    V = np.empty_like(U)
    u, ut = data.displacement.modes.copy(), data.velocity.modes.copy()
    U[0], V[0] = u, ut
    outcome = "ok"
    last = 0
    for i in range(1, nsteps + 1):
        u, ut = stepper(u, ut, real)
        if i % save_every == 0:
            j = i // save_every
            U[j], V[j] = u, ut
            last = j
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(ut))):
                outcome = "blowup"
                last = j - 1
                break
            diag = sobolev_norms_batch(grid, u, cfg.diagnostic_k)
            if not np.isfinite(diag):
                outcome = "blowup"
                last = j - 1
                break
            if diag > cfg.ceiling:
                outcome = "ceiling"
                break
    times = cfg.dt * save_every * np.arange(last + 1)
    return Trajectory(params, times, U[: last + 1], V[: last + 1], real, outcome,
                      {"steps": nsteps, "dt": cfg.dt})


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------


@dataclass
class PicardRecord:
    """Per-iteration X_T distances and the typed outcome of a Picard run."""

    distances: List[float] = field(default_factory=list)
    outcome: str = "running"

    @property
    def iterations(self) -> int:
        return len(self.distances)

    @property
    def ratios(self) -> np.ndarray:
        d = np.asarray(self.distances)
        if len(d) < 2:
            return np.array([])
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]

    @property
    def converged(self) -> bool:
        return self.outcome == "converged"


def picard_map(u_free: Trajectory, v_modes: np.ndarray, cfg: SolverConfig,
               params: Optional[PropagatorParams] = None):
    """``v -> -Duhamel((u_free + v)^p)``; returns displacement and velocity stacks."""
    params = params or PropagatorParams(cfg.nu, u_free.grid)
    w = u_free.u_modes + v_modes
    src = dealiased_power_modes(u_free.grid, w, cfg.p, cfg.padding, u_free.real)
    src_traj = Trajectory(params, u_free.times, src, None, u_free.real)
    U, V = duhamel_history(src_traj, params)
    return -U, -V


def picard_solve(u_free: Trajectory, cfg: SolverConfig, T: Optional[float] = None):
    """Fixed point of ``v -> -Duhamel((u_free + v)^p)`` on ``[0, T]``.

    Returns ``(v, record)``.  The run stops when the X_T distance between
    iterates drops below ``cfg.picard_tol`` (outcome ``"converged"``), after
    ``cfg.picard_max_iter`` iterations (``"max_iter"``), or when the distance
    ratio is >= 1 three times in a row (``"non_contraction"``).
    """
    if T is not None:
        if T > 1.0 + 1e-12:
            raise ValueError("T must be <= 1")
        u_free = u_free.truncated(T)
    grid = u_free.grid
    params = PropagatorParams(cfg.nu, grid)
    v = np.zeros_like(u_free.u_modes)
    vt = np.zeros_like(v)
    record = PicardRecord()
    growth = 0
    with np.errstate(over="ignore", invalid="ignore"):
        v, vt, record = _picard_loop(u_free, v, vt, record, growth, cfg, params, grid)
    traj = Trajectory(params, u_free.times.copy(), v, vt, u_free.real, record.outcome)
    return traj, record


def _picard_loop(u_free, v, vt, record, growth, cfg, params, grid):
    for _ in range(cfg.picard_max_iter):
        vn, vtn = picard_map(u_free, v, cfg, params)
        if not (np.all(np.isfinite(vn)) and np.all(np.isfinite(vtn))):
            record.outcome = "non_contraction"
            break
        d = xt_norm(grid, u_free.times, vn - v, u_free.real)
        record.distances.append(d)
        v, vt = vn, vtn
        if d <= cfg.picard_tol:
            record.outcome = "converged"
            break
        if len(record.distances) >= 2 and d >= record.distances[-2]:
            growth += 1
            if growth >= 3:
                record.outcome = "non_contraction"
                break
        else:
            growth = 0
    else:
        record.outcome = "max_iter"
    return v, vt, record


# ---------------------------------------------------------------------------
# Closeness to the limit field
# ---------------------------------------------------------------------------


def closeness_profile(phi0: SpectralField, nu: float, k: int, T: float, cfg: SolverConfig,
                      save_every: int = 1):
    """Times and ``H^k`` errors between the ``nu``-solution and the limit field."""
    cfg = replace(cfg, nu=nu)
    data = CauchyData.at_rest(phi0)
    traj = solve_ivp(data, T, cfg, save_every=save_every)
    if traj.outcome != "ok":
        raise FloatingPointError(f"solver stopped early: {traj.outcome}")
    osc = solve_V(cfg.p)
    errs = np.empty(len(traj.times))
    for i, t in enumerate(traj.times):
        lim_u, lim_ut = phi0_state(phi0, t, cfg.p, osc)
        du = traj.u_modes[i] - lim_u.modes
        dut = traj.ut_modes[i] - lim_ut.modes
        errs[i] = sobolev_norms_batch(phi0.grid, du, k) + sobolev_norms_batch(phi0.grid, dut, k)
    return traj.times, errs


def closeness_error(phi0: SpectralField, nu: float, k: int, T: float, cfg: SolverConfig,
                    save_every: int = 1) -> float:
    """``sup_t ||phi(t) - phi0(t)||_{H^k} + ||d_t phi(t) - d_t phi0(t)||_{H^k}``."""
    return float(closeness_profile(phi0, nu, k, T, cfg, save_every)[1].max())


# ---------------------------------------------------------------------------
# Scaled solution family and norm inflation
# ---------------------------------------------------------------------------


def rescaled_grid(grid: GridSpec, nu: float, lam: float) -> GridSpec:
    """Grid on which ``x -> phi(nu x / lam)`` has the same samples as ``phi``."""
    return make_grid(grid.dim, grid.points_per_axis, grid.half_width * lam / nu)


def _family_from_phi(phi_modes: np.ndarray, grid: GridSpec, nu: float, lam: float, p: int,
                     real: bool = True) -> SpectralField:
    amp = lam ** (-2.0 / (p - 1))
    g2 = rescaled_grid(grid, nu, lam)
    mu = nu / lam
    return SpectralField(g2, amp * mu ** (-grid.dim) * phi_modes, real)


def family_u_nu_lambda(phi0: SpectralField, nu: float, lam: float, t: float, cfg: SolverConfig,
                       grid_out: Optional[GridSpec] = None, tol: float = 1e-6) -> SpectralField:
    """``u(t, x) = lam^(-2/(p-1)) phi_nu(t/lam, nu x/lam)`` with ``phi_nu`` solving the ``nu``-equation.

    Without ``grid_out`` the result lives on the rescaled grid of half width
    ``L lam / nu`` where it is represented exactly.  With ``grid_out`` the
    field is resampled there; a spectrum leaving that grid's band raises.
    """
    if not (0 < lam <= nu):
        raise ValueError("need 0 < lambda <= nu")
    grid = phi0.grid
    tau = t / lam
    if tau > 0:
        nsteps = max(1, int(np.ceil(tau / cfg.dt - 1e-9)))
        c = replace(cfg, nu=nu, dt=tau / nsteps)
        traj = solve_ivp(CauchyData.at_rest(phi0), tau, c)
        if traj.outcome != "ok":
            raise FloatingPointError(f"solver stopped early: {traj.outcome}")
        phi_modes = traj.u_modes[-1]
    else:
        phi_modes = phi0.modes
    u = _family_from_phi(phi_modes, grid, nu, lam, cfg.p, phi0.real)
    if grid_out is None:
        return u
    mu = nu / lam
    tail_mask = np.zeros(grid.shape, dtype=bool)
    for comp in grid.wavevector:
        tail_mask = tail_mask | (np.abs(comp) * mu > grid_out.nyquist - 0.5 * grid_out.dk)
    total = np.sqrt(np.sum(np.abs(phi_modes) ** 2))
    if total > 0 and np.sqrt(np.sum(np.abs(phi_modes[tail_mask]) ** 2)) / total > tol:
        raise ValueError("band violation: rescaled spectrum exceeds the output grid band")
    phi = SpectralField(grid, phi_modes, phi0.real)
    vals = evaluate_interpolant(phi, mu * grid_out.axis_points) * lam ** (-2.0 / (cfg.p - 1))
    return SpectralField.from_samples(grid_out, vals)


def spectral_tail(grid: GridSpec, modes: np.ndarray, fraction: float = 2.0 / 3.0) -> np.ndarray:
    """Relative L^2 mass of modes beyond ``fraction`` of the per-axis Nyquist frequency."""
    mask = np.zeros(grid.shape, dtype=bool)
    for comp in grid.wavevector:
        mask = mask | (np.abs(comp) > fraction * grid.nyquist)
    axes = tuple(range(-grid.dim, 0))
    tot = np.sum(np.abs(modes) ** 2, axis=axes)
    tail = np.sum(np.abs(modes) ** 2 * mask, axis=axes)
    return np.sqrt(tail / np.maximum(tot, 1e-300))


@dataclass
class InflationScan:
    """Rows ``(nu, lambda, s, norm0, norm_max, t_max, ratio)`` plus growth fits."""

    s: float
    p: int
    rows: List[dict]
    growth: List[dict]
    flags: List[str]
    constant: float

    @property
    def max_ratio(self) -> float:
        return max((r["ratio"] for r in self.rows), default=float("nan"))


def inflation_scan(phi0: SpectralField, s: float, eps_targets: Sequence[float], cfg: SolverConfig,
                   nus: Sequence[float], T_phi: float, save_every: int = 5,
                   tail_tol: float = 1e-6, growth_window: float = 0.25) -> InflationScan:
    """Sweep ``(nu, lambda)`` along ``C lam^(s_cr - s) nu^(s - n/2) = eps``.

    ``C`` is the homogeneous ``H^s`` norm of ``phi0``, the exact large-``nu/lam``
    constant of the initial-data bound.  For each ``nu`` the ``nu``-equation is
    solved once up to ``T_phi``; each ``lambda`` reuses that solution through
    the scaling identity.  Samples whose spectral tail exceeds ``tail_tol``
    are beyond the resolution ceiling and are excluded (flagged).
    """
    grid = phi0.grid
    n, p = grid.dim, cfg.p
    s_cr = critical_exponent(n, p)
    if not (0 < s < s_cr):
        raise ValueError(f"s must lie in (0, s_cr) = (0, {s_cr})")
    C = sobolev_norm(phi0, s, homogeneous=True)
    rows, growth, flags = [], [], []
    from .harness import fit_exponent

    for nu in sorted(nus, reverse=True):
        c = replace(cfg, nu=nu)
        traj = solve_ivp(CauchyData.at_rest(phi0), T_phi, c, save_every=save_every)
        if traj.outcome != "ok":
            flags.append(f"nu={nu}: solver outcome {traj.outcome}")
        tails = spectral_tail(grid, traj.u_modes)
        good = np.nonzero(tails <= tail_tol)[0]
        last = int(good[-1]) if len(good) else 0
        if last < len(traj.times) - 1:
            flags.append(f"nu={nu}: resolution ceiling at tau={traj.times[last + 1]:.4g}")
        times = traj.times[: last + 1]
        modes = traj.u_modes[: last + 1]
        # growth of the nu-solution itself on the late window
        phi_norms = sobolev_norms_batch(grid, modes, s)
        late = times >= (1.0 - growth_window) * times[-1]
        late &= times > 0
        if late.sum() >= 3:
            slope, _, r2 = fit_exponent(times[late], phi_norms[late])
            growth.append({"nu": nu, "slope": slope, "r2": r2, "t_start": float(times[late][0]),
                           "t_end": float(times[-1])})
        for eps in eps_targets:
            lam = (eps / (C * nu ** (s - n / 2.0))) ** (1.0 / (s_cr - s))
            if lam > nu:
                flags.append(f"nu={nu}, eps={eps}: lambda={lam:.3g} exceeds nu, skipped")
                continue
            g2 = rescaled_grid(grid, nu, lam)
            amp = lam ** (-2.0 / (p - 1)) * (nu / lam) ** (-n)
            norms = sobolev_norms_batch(g2, amp * modes, s)
            imax = int(np.argmax(norms))
            rows.append({
                "nu": float(nu), "lambda": float(lam), "s": float(s), "eps": float(eps),
                "norm0": float(norms[0]), "norm_max": float(norms[imax]),
                "t_max": float(lam * times[imax]), "ratio": float(norms[imax] / norms[0]),
            })
    return InflationScan(s, p, rows, growth, flags, C)
