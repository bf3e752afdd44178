"""Wiener randomization on unit-scale frequency cubes and Monte Carlo estimators.

The bump ``sigma(xi) = prod_i b(xi_i)`` uses a 1D C^2 plateau ``b`` equal to 1
on ``|x| <= 1/2`` and 0 on ``|x| >= 1.1``.  Since ``sigma`` is a product, the
normalized partition ``psi = sigma / sum_j sigma(. - j)`` factorizes as
``prod_i b(xi_i) / sum_j b(xi_i - j)``, and its support lies in the cube of
half side 1.1, inside the ball of radius 2 for ``n <= 3``.

Random draws use a counter-based scheme: a 64-bit key is derived from
``(seed, field tag, sample index)`` with :class:`numpy.random.SeedSequence`
and each lattice point ``k`` hashes its zigzag-encoded coordinates through
the SplitMix64 finalizer.  A draw therefore depends only on
``(seed, tag, sample, k)``, not on iteration order or thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import binomtest, truncnorm

from .field_core import (
    CauchyData,
    GridSpec,
    SpectralField,
    _hermitian_flip,
    lebesgue_norm,
    lebesgue_norms_batch,
    smoothstep,
    time_integral,
    to_samples,
)
from .propagator import PropagatorParams, mult_A, mult_B

PLATEAU = 0.5
BUMP_EDGE = 1.1
TAG_DISPLACEMENT = 0
TAG_VELOCITY = 1


# ---------------------------------------------------------------------------
# Partition of unity
# ---------------------------------------------------------------------------


def bump_1d(x) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=float))
    return 1.0 - smoothstep((x - PLATEAU) / (BUMP_EDGE - PLATEAU))


def _psi_1d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    base = np.floor(x)
    num = bump_1d(x)
    den = np.zeros_like(x)
    for j in range(-2, 4):
        den = den + bump_1d(x - (base + j))
    return num / den


def psi(xi) -> np.ndarray:
    """Normalized partition function; ``xi`` has shape ``(..., n)``."""
    xi = np.asarray(xi, dtype=float)
    out = np.ones(xi.shape[:-1])
    for a in range(xi.shape[-1]):
        out = out * _psi_1d(xi[..., a])
    return out


@dataclass(frozen=True, eq=False)
class UnitPartition:
    """Per-axis tables of ``psi_1d(xi - k)`` on the grid frequencies."""

    grid: GridSpec
    ks: np.ndarray       # integer lattice coordinates along one axis
    table: np.ndarray    # shape (len(ks), N): psi_1d(xi_axis - k)

    @property
    def index_set(self) -> np.ndarray:
        """All lattice points ``k`` (shape ``(K**n, n)``) in row-major order."""
        mesh = np.meshgrid(*([self.ks] * self.grid.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def _row(self, k_i: int) -> np.ndarray:
        idx = int(k_i) - int(self.ks[0])
        if idx < 0 or idx >= len(self.ks):
            return np.zeros(self.grid.points_per_axis)
        return self.table[idx]

    def weights(self, k) -> np.ndarray:
        """``psi(xi - k)`` on the full lattice (FFT order)."""
        k = np.atleast_1d(np.asarray(k)).astype(int)
        if k.shape != (self.grid.dim,):
            raise ValueError("lattice point has the wrong dimension")
        out = np.ones(self.grid.shape)
        for a in range(self.grid.dim):
            out = out * self.grid._broadcast_axis(self._row(k[a]), a)
        return out

    def multiplier(self, coeffs: np.ndarray) -> np.ndarray:
        """``sum_k c_k psi(xi - k)`` for a coefficient tensor of shape ``(K,)*n``."""
        out = np.asarray(coeffs)
        for _ in range(self.grid.dim):
            # contract the leading lattice axis against the table, append the grid axis
            out = np.tensordot(out, self.table, axes=([0], [0]))
        return out

    def sum_residual(self) -> float:
        total = self.multiplier(np.ones((len(self.ks),) * self.grid.dim))
        return float(np.abs(total - 1.0).max())


def build_partition(grid: GridSpec, data_band: Optional[float] = None) -> UnitPartition:
    """Tabulate the partition on ``grid`` and check that it sums to one."""
    if grid.nyquist < 2.5:
        raise ValueError("band too small for unit-scale projections")
    if data_band is not None and data_band + 2.0 > grid.nyquist:
        raise ValueError("band too small: data spectrum plus radius 2 exceeds Nyquist")
    xi = grid.axis_frequencies
    kmax = int(np.ceil(np.abs(xi).max() + BUMP_EDGE))
    ks = np.arange(-kmax, kmax + 1)
    table = _psi_1d(xi[None, :] - ks[:, None]) * (np.abs(xi[None, :] - ks[:, None]) < BUMP_EDGE)
    keep = np.any(table > 0, axis=1)
    ks, table = ks[keep], table[keep]
    part = UnitPartition(grid, ks, table)
    if part.sum_residual() > 1e-12:
        raise ValueError("partition does not sum to one")
    return part


# ---------------------------------------------------------------------------
# Laws and seeds
# ---------------------------------------------------------------------------

TG_CUTOFF = 4.0


@dataclass(frozen=True)
class RandomLaw:
    """Mean-zero, unit-variance law: rademacher, uniform, truncated_gaussian or ones.

    ``ones`` is a degenerate hook returning 1 for every draw.
    """

    variant: str = "rademacher"

    VARIANTS = ("rademacher", "uniform", "truncated_gaussian", "ones")

    def __post_init__(self):
        if self.variant not in self.VARIANTS:
            raise ValueError(f"unknown law {self.variant!r}; choose one of {self.VARIANTS}")

    @cached_property
    def _tg_variance(self) -> float:
        return float(truncnorm.var(-TG_CUTOFF, TG_CUTOFF))

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms on (0, 1) to draws of the law."""
        if self.variant == "rademacher":
            return np.where(u < 0.5, -1.0, 1.0)
        if self.variant == "uniform":
            return np.sqrt(3.0) * (2.0 * u - 1.0)
        if self.variant == "truncated_gaussian":
            lo = ndtr(-TG_CUTOFF)
            x = ndtri(lo + u * (1.0 - 2.0 * lo))
            return x / np.sqrt(self._tg_variance)
        return np.ones_like(u)

    def exact_moments(self) -> np.ndarray:
        """Moments of orders 1..6."""
        if self.variant in ("rademacher",):
            return np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
        if self.variant == "ones":
            return np.ones(6)
        if self.variant == "uniform":
            return np.array([0.0, 1.0, 0.0, 9.0 / 5.0, 0.0, 27.0 / 7.0])
        v = self._tg_variance
        return np.array([0.0 if m % 2 else truncnorm.moment(m, -TG_CUTOFF, TG_CUTOFF) / v ** (m / 2)
                         for m in range(1, 7)])

    @property
    def sixth_moment(self) -> float:
        return float(self.exact_moments()[5])


_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _encode_lattice(ks: np.ndarray) -> np.ndarray:
    ks = np.atleast_2d(np.asarray(ks, dtype=np.int64))
    zig = np.where(ks >= 0, 2 * ks, -2 * ks - 1).astype(np.uint64)
    code = np.zeros(ks.shape[0], dtype=np.uint64)
    for a in range(ks.shape[1]):
        code = code | (zig[:, a] << np.uint64(21 * a))
    return code


@dataclass(frozen=True)
class SeedSpec:
    """Master seed for counter-based draws keyed on ``(seed, tag, sample, k)``."""

    seed: int

    def key(self, tag: int, sample: int) -> np.uint64:
        words = np.random.SeedSequence(entropy=int(self.seed) & 0xFFFFFFFFFFFFFFFF,
                                       spawn_key=(int(tag), int(sample))).generate_state(2, np.uint64)
        return np.uint64(words[0] ^ (words[1] << np.uint64(1)))

    def uniforms(self, tag: int, sample: int, ks) -> np.ndarray:
        """One uniform on (0, 1) per lattice point."""
        with np.errstate(over="ignore"):
            h = _splitmix64(self.key(tag, sample) ^ _splitmix64(_encode_lattice(ks)))
        return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def draws(self, law: RandomLaw, tag: int, sample: int, ks) -> np.ndarray:
        return law.transform(self.uniforms(tag, sample, ks))


def _canonical_pair(ks: np.ndarray) -> np.ndarray:
    """Representative of ``{k, -k}``: the lexicographically larger point."""
    ks = np.asarray(ks)
    neg = -ks
    pick_neg = np.zeros(len(ks), dtype=bool)
    decided = np.zeros(len(ks), dtype=bool)
    for a in range(ks.shape[1]):
        gt = (neg[:, a] > ks[:, a]) & ~decided
        lt = (neg[:, a] < ks[:, a]) & ~decided
        pick_neg |= gt
        decided |= gt | lt
    return np.where(pick_neg[:, None], neg, ks)


# ---------------------------------------------------------------------------
# Randomization
# ---------------------------------------------------------------------------


def random_coefficients(partition: UnitPartition, law: RandomLaw, seed: SeedSpec, tag: int,
                        sample: int = 0, real: bool = True) -> np.ndarray:
    """Coefficient tensor ``h_k`` of shape ``(K,)*n``.

    With ``real=True`` the draws satisfy ``h_{-k} = h_k`` so that real data
    stay real; otherwise every ``k`` is independent.
    """
    ks = partition.index_set
    keyed = _canonical_pair(ks) if real else ks
    h = seed.draws(law, tag, sample, keyed)
    return h.reshape((len(partition.ks),) * partition.grid.dim)


def randomize(data: CauchyData, law: RandomLaw, seed: SeedSpec, partition: UnitPartition,
              sample: int = 0) -> CauchyData:
    """``f^w = sum_k h_k P_k f``, ``g^w = sum_k l_k P_k g`` with independent streams."""
    if partition.grid != data.grid:
        raise ValueError("partition was built for a different grid")
    f, g = data.displacement, data.velocity
    real = f.real and g.real
    mh = partition.multiplier(random_coefficients(partition, law, seed, TAG_DISPLACEMENT, sample, real))
    ml = partition.multiplier(random_coefficients(partition, law, seed, TAG_VELOCITY, sample, real))
    if real:
        # the Nyquist index stands for both signs; averaging keeps real data real there
        axes = range(f.grid.dim)
        mh = 0.5 * (mh + _hermitian_flip(mh, axes))
        ml = 0.5 * (ml + _hermitian_flip(ml, axes))
    return CauchyData(SpectralField(f.grid, f.modes * mh, f.real),
                      SpectralField(g.grid, g.modes * ml, g.real), data.sobolev_index)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass
class MCStats:
    """Monte Carlo mean with standard error and a normal 95% interval."""

    estimate: float
    stderr: float
    M: int
    ci95: tuple

    @classmethod
    def from_samples(cls, x) -> "MCStats":
        x = np.asarray(x, dtype=float)
        m = float(x.mean())
        se = float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else float("nan")
        return cls(m, se, int(len(x)), (m - 1.96 * se, m + 1.96 * se))

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "M": self.M,
                "ci95": [float(self.ci95[0]), float(self.ci95[1])]}


def moment_report(law: RandomLaw, M: int, seed: SeedSpec = SeedSpec(0),
                  n_vectors: int = 100, n_coeffs: int = 16, ld_samples: Optional[int] = None) -> dict:
    """Empirical moments 1..6 with standard errors and large-deviation ratios.

    The large-deviation ratio for a coefficient vector ``c`` is
    ``(E |sum_k h_k c_k|^p)^(1/p) / |c|_2`` for ``p`` in (2, 4, 6).
    """
    if M < 1000:
        raise ValueError("M must be >= 1000")
    ks = np.arange(M)[:, None]
    x = seed.draws(law, 7, 0, ks)
    powers = np.stack([x**m for m in range(1, 7)])
    mean = powers.mean(axis=1)
    se = powers.std(axis=1, ddof=1) / np.sqrt(M)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed.seed, spawn_key=(99,)))
    ld_samples = ld_samples or M
    lattice = np.arange(n_coeffs)[:, None]
    H = np.stack([seed.draws(law, 8, w, lattice) for w in range(ld_samples)])  # (S, K)
    ratios: Dict[int, list] = {2: [], 4: [], 6: []}
    for _ in range(n_vectors):
        c = rng.standard_normal(n_coeffs) * rng.uniform(0.1, 1.0, n_coeffs)
        s = H @ c
        norm = np.sqrt(np.sum(c**2))
        for p in ratios:
            ratios[p].append(float(np.mean(np.abs(s) ** p) ** (1.0 / p) / norm))
    return {
        "law": law.variant,
        "M": M,
        "moments": mean.tolist(),
        "stderr": se.tolist(),
        "exact": law.exact_moments().tolist(),
        "large_deviation": {p: np.asarray(v) for p, v in ratios.items()},
    }


def bernstein_check(f: SpectralField, k, p1: float, p2: float, partition: UnitPartition) -> float:
    """``||P_k f||_{p2} / ||P_k f||_{p1}`` for ``2 <= p1 <= p2 <= inf``."""
    if not (2 <= p1 <= p2):
        raise ValueError("need 2 <= p1 <= p2")
    w = partition.weights(k)
    piece = SpectralField(f.grid, f.modes * w, real=False)
    den = lebesgue_norm(piece, p1)
    if den == 0:
        raise ValueError("zero projection")
    return float(lebesgue_norm(piece, p2) / den)


# ---------------------------------------------------------------------------
# Free-evolution Monte Carlo
# ---------------------------------------------------------------------------


def _free_l6_cumulative(data: CauchyData, times: np.ndarray, ends: Sequence[int]) -> np.ndarray:
    """``int_0^{times[e]} ||u(t)||_6^6 dt`` for each index ``e`` in ``ends``."""
    grid = data.grid
    xi = grid.xi_magnitude
    f, g = data.displacement.modes, data.velocity.modes
    real = data.displacement.real and data.velocity.real
    per_t = np.empty(len(times))
    for i, t in enumerate(times):
        u = mult_A(xi, t) * f + mult_B(xi, t) * g
        per_t[i] = lebesgue_norms_batch(grid, to_samples(grid, u, real), 6) ** 6
    return np.array([time_integral(per_t[: e + 1], times[: e + 1]) for e in ends])


def _time_grid(T_values: Sequence[float], steps_per_min: int):
    T_values = np.asarray(sorted(T_values), dtype=float)
    h = T_values[0] / steps_per_min
    n = int(round(T_values[-1] / h))
    times = h * np.arange(n + 1)
    ends = [int(round(T / h)) for T in T_values]
    if any(abs(times[e] - T) > 1e-9 for e, T in zip(ends, T_values)):
        raise ValueError("T values must be integer multiples of the smallest T / steps_per_min")
    return T_values, times, ends


def _map(fn, items, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def mc_free_l6_samples(data: CauchyData, law: RandomLaw, seed: SeedSpec, T_values, M: int,
                       partition: Optional[UnitPartition] = None, steps_per_min: int = 8,
                       threads: int = 1) -> np.ndarray:
    """Per-sample ``||u^w||_{L^6([0,T] x box)}^6`` for each ``T``; shape ``(M, len(T))``."""
    if partition is None:
        partition = build_partition(data.grid)
    T_values, times, ends = _time_grid(T_values, steps_per_min)

    def one(w):
        return _free_l6_cumulative(randomize(data, law, seed, partition, w), times, ends)

    return np.array(_map(one, range(M), threads))


@dataclass
class AveragingResult:
    T: np.ndarray
    stats: list
    slope: float
    intercept: float
    r2: float


def mc_free_L6(data: CauchyData, law: RandomLaw, seed: SeedSpec, T, M: int,
               partition: Optional[UnitPartition] = None, steps_per_min: int = 8,
               threads: int = 1):
    """Monte Carlo estimate of ``E ||u^w||^6_{L^6([0,T] x box)}``.

    ``T`` may be a scalar (returns :class:`MCStats`) or a grid of horizons
    (returns :class:`AveragingResult` with the fitted exponent of ``T``).
    """
    if data.grid.dim != 2:
        raise ValueError("the averaging estimate is set in two dimensions")
    if M < 50:
        raise ValueError("M must be >= 50")
    scalar = np.isscalar(T)
    T_values = [float(T)] if scalar else list(T)
    if max(T_values) > 1.0 + 1e-12:
        raise ValueError("T must be <= 1")
    samples = mc_free_l6_samples(data, law, seed, T_values, M, partition, steps_per_min, threads)
    stats = [MCStats.from_samples(samples[:, j]) for j in range(samples.shape[1])]
    if scalar:
        return stats[0]
    from .harness import fit_exponent

    Ts = np.asarray(sorted(T_values))
    est = np.array([s.estimate for s in stats])
    slope, intercept, r2 = fit_exponent(Ts, est)
    return AveragingResult(Ts, stats, slope, intercept, r2)


def wilson_interval(successes: int, trials: int, confidence: float = 0.95):
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def tail_probability(data: CauchyData, law: RandomLaw, seed: SeedSpec, lam, T: float, M: int,
                     partition: Optional[UnitPartition] = None, steps_per_min: int = 64,
                     threads: int = 1) -> dict:
    """Fraction of samples with ``||u^w||_{L^6([0,T] x box)} >= lam`` plus a Wilson interval.

    ``lam`` may be a scalar or an array; the same samples serve every level.
    """
    if M < 200:
        raise ValueError("M must be >= 200")
    samples = mc_free_l6_samples(data, law, seed, [T], M, partition, steps_per_min, threads)[:, 0]
    norms = samples ** (1.0 / 6.0)
    lams = np.atleast_1d(np.asarray(lam, dtype=float))
    out = []
    for level in lams:
        hits = int(np.sum(norms >= level))
        out.append({"lambda": float(level), "fraction": hits / M,
                    "ci95": wilson_interval(hits, M), "hits": hits})
    return {"T": float(T), "M": M, "sixth_moment": MCStats.from_samples(samples).to_dict(),
            "levels": out, "norms": norms}
