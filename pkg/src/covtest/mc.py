"""Deterministic Monte Carlo engine: calibration, size/power estimation, diagnostics.

Reproducibility contract
------------------------
Replicate ``r`` of a run with master seed ``s`` draws its data from the
counter-based stream ``Philox(key=(s, offset + r))``, where ``offset`` is 0
for power/size evaluation and ``2**62`` for null calibration (so calibrated
thresholds are independent of the evaluation replicates by construction).
The ``(seed, index) -> key`` map is injective: both words go verbatim into
the 128-bit Philox key. Distinct keys yield statistically independent
streams.

Replicates are evaluated in fixed-size chunks and aggregated in replicate
order with integer or array writes, so results are bitwise identical for any
worker count; worker threads only decide which chunk is computed when.
All requested statistics for a replicate are evaluated on the *same* data
(common random numbers), which sharpens power comparisons between tests
without biasing the individual estimates.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import covmodels, stats
from .covmodels import CovarianceModel, EquiCorrelation, Identity, Tridiagonal, factorize
from .errors import (
    DegenerateRatio,
    EmptyGrid,
    ParameterOutOfRange,
    RequiresPLessThanN,
    TooFewSamples,
)

__all__ = [
    "RngStream",
    "SimulationPlan",
    "PowerEstimate",
    "PowerPoint",
    "PowerCurve",
    "CALIBRATION_STREAM_OFFSET",
    "STATISTICS",
    "simulate_statistics",
    "simulate_null_statistics",
    "empirical_upper_quantile",
    "calibrate_null_threshold",
    "calibrate_null_thresholds",
    "resolve_thresholds",
    "estimate_power",
    "power_curve",
    "empirical_kolmogorov_distance",
    "preset_plan",
    "preset_tau_grid",
]

#: statistic identifiers understood by the engine
STATISTICS = ("tn", "clr")

#: stream index offset reserved for null-threshold calibration
CALIBRATION_STREAM_OFFSET = 1 << 62

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A (master seed, stream index) pair addressing one Philox substream."""

    seed: int
    index: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.seed, (int, np.integer)):
            raise ParameterOutOfRange(f"seed must be an integer, got {self.seed!r}")
        if not isinstance(self.index, (int, np.integer)) or not 0 <= self.index <= _MASK64:
            raise ParameterOutOfRange(f"stream index must be a 64-bit integer, got {self.index!r}")

    def generator(self) -> np.random.Generator:
        """Fresh generator for this substream; calling twice gives equal draws."""
        key = np.array([int(self.seed) & _MASK64, int(self.index)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class PowerEstimate:
    """Rejection-rate estimate with its binomial uncertainty."""

    rejections: int
    replicates: int

    def __post_init__(self) -> None:
        if self.replicates < 1 or not 0 <= self.rejections <= self.replicates:
            raise ParameterOutOfRange(
                f"need 0 <= rejections <= replicates, got {self.rejections}/{self.replicates}"
            )

    @property
    def estimate(self) -> float:
        return self.rejections / self.replicates

    @property
    def se(self) -> float:
        p = self.estimate
        return math.sqrt(p * (1.0 - p) / self.replicates)

    @property
    def ci95(self) -> tuple[float, float]:
        z = float(norm.ppf(0.975))
        p = self.estimate
        return (max(0.0, p - z * self.se), min(1.0, p + z * self.se))


@dataclass(frozen=True)
class SimulationPlan:
    """Full deterministic description of one experiment.

    A plan pins everything that influences the output: sizes, level,
    replicate count, master seed, which statistics run, how thresholds are
    obtained, and the model (or model grid). Re-running an identical plan
    reproduces counts and thresholds bitwise for any worker count.
    """

    n: int
    p: int
    reps: int
    seed: int
    alpha: float = 0.05
    statistics: tuple[str, ...] = ("tn",)
    threshold_source: str = "calibrated"
    calibration_reps: int = 100_000
    workers: int = 1
    model: CovarianceModel | None = None
    grid: tuple[tuple[float, CovarianceModel], ...] | None = None

    def __post_init__(self) -> None:
        if isinstance(self.statistics, str):
            object.__setattr__(self, "statistics", (self.statistics,))
        else:
            object.__setattr__(self, "statistics", tuple(self.statistics))
        if self.grid is not None:
            object.__setattr__(
                self, "grid", tuple((float(a), m) for a, m in self.grid)
            )
        self.validate()

    def validate(self) -> None:
        if self.n < 2:
            raise ParameterOutOfRange(f"plan needs n >= 2, got {self.n}")
        if self.p < 1:
            raise ParameterOutOfRange(f"plan needs p >= 1, got {self.p}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterOutOfRange(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.reps < 1:
            raise ParameterOutOfRange(f"plan needs reps >= 1, got {self.reps}")
        if self.workers < 1:
            raise ParameterOutOfRange(f"plan needs workers >= 1, got {self.workers}")
        if not self.statistics:
            raise ParameterOutOfRange("plan needs at least one statistic")
        for s in self.statistics:
            if s not in STATISTICS:
                raise ParameterOutOfRange(f"unknown statistic {s!r}; expected one of {STATISTICS}")
        if self.threshold_source not in ("calibrated", "asymptotic"):
            raise ParameterOutOfRange(
                f"threshold_source must be 'calibrated' or 'asymptotic', got {self.threshold_source!r}"
            )
        if self.threshold_source == "calibrated" and self.calibration_reps < 100:
            raise ParameterOutOfRange(
                f"calibration needs at least 100 replicates, got {self.calibration_reps}"
            )
        if "clr" in self.statistics:
            # refuse invalid CLR plans up front, not at replicate time
            if self.p >= self.n:
                raise RequiresPLessThanN(
                    f"the corrected LR statistic needs p < n, got p={self.p}, n={self.n}"
                )
            if 1.0 - self.p / self.n <= 1e-8:
                raise DegenerateRatio(
                    f"p/n = {self.p}/{self.n} is within 1e-8 of 1; CLR scaling degenerates"
                )
        for m in self._models():
            if m.p != self.p:
                raise ParameterOutOfRange(f"model dimension {m.p} != plan dimension {self.p}")

    def _models(self) -> tuple[CovarianceModel, ...]:
        out: list[CovarianceModel] = []
        if self.model is not None:
            out.append(self.model)
        if self.grid is not None:
            out.extend(m for _, m in self.grid)
        return tuple(out)


@dataclass(frozen=True)
class PowerPoint:
    """One grid point of a power curve."""

    param: float
    frob_dist: float
    estimates: dict[str, PowerEstimate] = field(compare=False)


@dataclass(frozen=True)
class PowerCurve:
    """Power estimates along a model grid, ordered by ||Sigma - I||_F."""

    points: tuple[PowerPoint, ...]
    thresholds: dict[str, float] = field(compare=False)
    threshold_source: str = "calibrated"


# ---------------------------------------------------------------------------
# Replicate engine
# ---------------------------------------------------------------------------


def _chunk_rows(n: int, p: int) -> int:
    """Replicates per evaluation chunk; a function of (n, p) only."""
    return max(8, min(1024, 4_000_000 // max(1, n * p)))


def _eval_chunk(
    gamma: np.ndarray | None,
    n: int,
    p: int,
    statistics: tuple[str, ...],
    seed: int,
    lo: int,
    hi: int,
    offset: int,
    clr_consts: tuple[float, float] | None,
) -> dict[str, np.ndarray]:
    b = hi - lo
    z = np.empty((b, n, p))
    # One reusable Philox per chunk, re-keyed per replicate: bitwise identical
    # to RngStream(seed, index).generator() but without the per-instance
    # entropy setup, which otherwise dominates small-matrix runs.
    bitgen = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
    template = bitgen.state
    template["state"]["key"][0] = int(seed) & _MASK64
    gen = np.random.Generator(bitgen)
    for j in range(b):
        template["state"]["key"][1] = offset + lo + j
        bitgen.state = template
        z[j] = gen.standard_normal((n, p))
    x = z if gamma is None else z @ gamma.T

    sq = np.einsum("rij,rij->ri", x, x)  # squared row norms per replicate
    # n x n Gram when n <= p, else p x p; the chosen side depends on (n, p)
    # only, so a replicate's value never depends on which statistics run.
    if n <= p:
        g = np.matmul(x, x.transpose(0, 2, 1))
    else:
        g = np.matmul(x.transpose(0, 2, 1), x)
    out: dict[str, np.ndarray] = {}
    if "tn" in statistics:
        cross_sq = np.einsum("rab,rab->r", g, g)
        pair_sum = 0.5 * (cross_sq - np.einsum("ri,ri->r", sq, sq))
        out["tn"] = (2.0 / (n * (n - 1))) * pair_sum - (2.0 / n) * sq.sum(axis=1) + p
    if "clr" in statistics:
        s = g / n  # p < n is enforced at plan validation, so g is p x p
        chol = np.linalg.cholesky(s)
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        l_n = sq.sum(axis=1) / n - logdet - p
        center, scale = clr_consts
        out["clr"] = (l_n - center) / scale
    return out


def simulate_statistics(
    model: CovarianceModel,
    n: int,
    statistics,
    reps: int,
    seed: int,
    workers: int = 1,
    stream_offset: int = 0,
) -> dict[str, np.ndarray]:
    """Per-replicate statistic values under ``model``; replicate r uses stream r.

    Returns one float array of length ``reps`` per requested statistic. The
    value of replicate ``r`` depends only on ``(model, n, seed, stream_offset
    + r)``: neither the total replicate count, nor chunking, nor the worker
    count can change it.
    """
    statistics = (statistics,) if isinstance(statistics, str) else tuple(statistics)
    for s in statistics:
        if s not in STATISTICS:
            raise ParameterOutOfRange(f"unknown statistic {s!r}; expected one of {STATISTICS}")
    p = model.p
    if "clr" in statistics:
        if p >= n:
            raise RequiresPLessThanN(f"the corrected LR statistic needs p < n, got p={p}, n={n}")
        if 1.0 - p / n <= 1e-8:
            raise DegenerateRatio(f"p/n = {p}/{n} is within 1e-8 of 1")
    gamma = None if isinstance(model, Identity) else factorize(model.build())
    clr_consts = stats._clr_constants(n, p) if "clr" in statistics else None

    chunk = _chunk_rows(n, p)
    bounds = [(lo, min(lo + chunk, reps)) for lo in range(0, reps, chunk)]
    out = {s: np.empty(reps) for s in statistics}

    def run(span):
        lo, hi = span
        return lo, hi, _eval_chunk(gamma, n, p, statistics, seed, lo, hi, stream_offset, clr_consts)

    if workers <= 1 or len(bounds) <= 1:
        results = map(run, bounds)
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        try:
            results = list(pool.map(run, bounds))
        finally:
            pool.shutdown()
    for lo, hi, vals in results:
        for s in statistics:
            out[s][lo:hi] = vals[s]
    return out


def simulate_null_statistics(
    statistic: str,
    n: int,
    p: int,
    reps: int,
    seed: int,
    workers: int = 1,
    standardized: bool = False,
) -> np.ndarray:
    """Statistic values under the null ``Sigma = I``.

    With ``standardized=True`` the pairwise statistic is divided by its null
    standard deviation (the corrected LR statistic is already standardized).
    """
    values = simulate_statistics(Identity(p), n, (statistic,), reps, seed, workers)[statistic]
    if standardized and statistic == "tn":
        values = values / stats.null_sd_T(n, p)
    return values


# ---------------------------------------------------------------------------
# Calibration and power
# ---------------------------------------------------------------------------


def empirical_upper_quantile(values, alpha: float) -> float:
    """The ``ceil(R(1-alpha))``-th order statistic of ``values`` (1-indexed).

    A plain order statistic, no interpolation: deterministic, slightly
    conservative, and nonincreasing in ``alpha``. A constant sample returns
    that constant for every ``alpha``.
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterOutOfRange(f"alpha must lie in (0, 1), got {alpha}")
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    if v.size == 0:
        raise ParameterOutOfRange("cannot take a quantile of an empty sample")
    rank = math.ceil(v.size * (1.0 - alpha))
    return float(v[max(rank, 1) - 1])


def calibrate_null_thresholds(
    statistics,
    n: int,
    p: int,
    alpha: float = 0.05,
    reps: int = 100_000,
    seed: int = 0,
    workers: int = 1,
) -> dict[str, float]:
    """Monte Carlo critical values from the null order statistics.

    All statistics are calibrated from one shared set of null replicates,
    drawn from the dedicated calibration stream range so they stay
    independent of any evaluation run under the same master seed.
    """
    statistics = (statistics,) if isinstance(statistics, str) else tuple(statistics)
    if reps < 100:
        raise ParameterOutOfRange(f"calibration needs at least 100 replicates, got {reps}")
    values = simulate_statistics(
        Identity(p), n, statistics, reps, seed, workers, stream_offset=CALIBRATION_STREAM_OFFSET
    )
    return {s: empirical_upper_quantile(values[s], alpha) for s in statistics}


def calibrate_null_threshold(
    statistic: str,
    n: int,
    p: int,
    alpha: float = 0.05,
    reps: int = 100_000,
    seed: int = 0,
    workers: int = 1,
) -> float:
    """Single-statistic convenience wrapper around :func:`calibrate_null_thresholds`."""
    return calibrate_null_thresholds((statistic,), n, p, alpha, reps, seed, workers)[statistic]


def _asymptotic_threshold(statistic: str, n: int, p: int, alpha: float) -> float:
    if statistic == "tn":
        return stats.asymptotic_threshold_psi(n, p, alpha)
    return stats.normal_quantile(1.0 - alpha)  # clr is already standardized


def resolve_thresholds(plan: SimulationPlan) -> dict[str, float]:
    """Thresholds for every statistic in the plan, per its threshold source."""
    if plan.threshold_source == "asymptotic":
        return {s: _asymptotic_threshold(s, plan.n, plan.p, plan.alpha) for s in plan.statistics}
    return calibrate_null_thresholds(
        plan.statistics, plan.n, plan.p, plan.alpha, plan.calibration_reps, plan.seed, plan.workers
    )


def estimate_power(
    plan: SimulationPlan,
    thresholds: dict[str, float] | None = None,
    model: CovarianceModel | None = None,
) -> dict[str, PowerEstimate]:
    """Rejection rate of each planned test over ``plan.reps`` replicates.

    Replicate ``r`` uses stream index ``r``; the rejection count is an integer
    sum, so the result is independent of execution order and worker count.
    """
    model = model if model is not None else plan.model
    if model is None:
        raise ParameterOutOfRange("estimate_power needs a model (plan.model or argument)")
    if thresholds is None:
        thresholds = resolve_thresholds(plan)
    values = simulate_statistics(
        model, plan.n, plan.statistics, plan.reps, plan.seed, plan.workers
    )
    out = {}
    for s in plan.statistics:
        k = int(np.count_nonzero(values[s] > thresholds[s]))
        out[s] = PowerEstimate(rejections=k, replicates=plan.reps)
    return out


def power_curve(plan: SimulationPlan) -> PowerCurve:
    """Power of each planned test at every grid point, sharing thresholds.

    Thresholds are resolved once per (statistic, n, p); every grid point is
    then evaluated with the same replicate streams (common random numbers
    across grid points and statistics).
    """
    if plan.grid is None or len(plan.grid) == 0:
        raise EmptyGrid("power_curve needs a nonempty model grid")
    frobs = [covmodels.frobenius_distance_to_identity(m.build()) for _, m in plan.grid]
    for a, b in zip(frobs, frobs[1:]):
        if not b > a:
            raise ParameterOutOfRange(
                "grid must be strictly increasing in ||Sigma - I||_F, got "
                f"{a:.6g} followed by {b:.6g}"
            )
    thresholds = resolve_thresholds(plan)
    points = []
    for (param, model), frob in zip(plan.grid, frobs):
        estimates = estimate_power(plan, thresholds=thresholds, model=model)
        points.append(PowerPoint(param=param, frob_dist=frob, estimates=estimates))
    return PowerCurve(
        points=tuple(points), thresholds=thresholds, threshold_source=plan.threshold_source
    )


# ---------------------------------------------------------------------------
# Empirical distribution diagnostic
# ---------------------------------------------------------------------------


def empirical_kolmogorov_distance(samples, cdf=None) -> float:
    """``sup_x |F_hat(x) - F(x)|`` against a reference cdf (standard normal default).

    One pass over the sorted sample; needs at least 100 points.
    """
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    m = x.size
    if m < 100:
        raise TooFewSamples(f"need at least 100 samples, got {m}")
    ref = norm.cdf if cdf is None else cdf
    fv = np.asarray(ref(x), dtype=float)
    i = np.arange(1, m + 1)
    d_plus = float(np.max(i / m - fv))
    d_minus = float(np.max(fv - (i - 1) / m))
    return max(d_plus, d_minus, 0.0)


# ---------------------------------------------------------------------------
# Figure presets
# ---------------------------------------------------------------------------

#: dimension, level and per-dot replicates shared by the two figure presets
PRESET_P = 40
PRESET_ALPHA = 0.05
PRESET_REPS = 5000
#: separations tau = ||Sigma - I||_F / sqrt(p/n) covered by the preset grids
PRESET_TAUS = (0.8, 1.0857, 1.3714, 1.6571, 1.9429, 2.2286, 2.5143, 2.8)

_PRESET_MODELS = {"fig1": "equicorr", "fig2": "tridiag"}


def preset_tau_grid(preset: str, n: int, p: int = PRESET_P):
    """(rho, model) grid whose Frobenius separations hit ``PRESET_TAUS``.

    For the equi-correlation family ``rho = tau / sqrt(n (p-1))``; for the
    tridiagonal family ``rho = tau sqrt(p/n) / sqrt(2 (p-1))``. Both keep rho
    well inside the positive-definite range for the preset sizes.
    """
    if preset not in _PRESET_MODELS:
        raise ParameterOutOfRange(f"unknown preset {preset!r}; expected fig1 or fig2")
    kind = _PRESET_MODELS[preset]
    grid = []
    for tau in PRESET_TAUS:
        if kind == "equicorr":
            rho = tau / math.sqrt(n * (p - 1))
            model: CovarianceModel = EquiCorrelation(p, rho)
        else:
            rho = tau * math.sqrt(p / n) / math.sqrt(2 * (p - 1))
            model = Tridiagonal(p, rho)
        grid.append((rho, model))
    return tuple(grid)


def preset_plan(
    preset: str,
    n: int = 80,
    seed: int = 0,
    workers: int = 1,
    reps: int = PRESET_REPS,
    calibration_reps: int = 100_000,
) -> SimulationPlan:
    """Simulation plan reproducing one of the two power-curve figures."""
    grid = preset_tau_grid(preset, n)
    return SimulationPlan(
        n=n,
        p=PRESET_P,
        reps=reps,
        seed=seed,
        alpha=PRESET_ALPHA,
        statistics=("tn", "clr"),
        threshold_source="calibrated",
        calibration_reps=calibration_reps,
        workers=workers,
        grid=grid,
    )
