"""Monte Carlo toolkit for one-sample tests of a high-dimensional covariance identity.

The package tests ``H0: Sigma = I`` from ``n`` mean-zero Gaussian rows of
dimension ``p`` (testing against any known ``Sigma_0`` reduces to this by
whitening the data with ``Sigma_0^{-1/2}`` beforehand; the mean is assumed
known to be zero, so nothing is centered). It provides:

* :mod:`covtest.covmodels` -- structured covariance matrices, their scalar
  functionals, and deterministic Gaussian sampling;
* :mod:`covtest.stats` -- the pairwise U-statistic test, the corrected
  likelihood-ratio test, and their closed-form moment and power formulas;
* :mod:`covtest.mc` -- a deterministic, parallelizable Monte Carlo engine for
  threshold calibration, size/power estimation, and distribution diagnostics;
* :mod:`covtest.oracle` -- brute-force verification of every closed-form
  identity used anywhere above;
* :mod:`covtest.cli` -- the ``covtest`` command-line interface.
"""

from . import cli, covmodels, mc, oracle, stats
from .covmodels import (
    Dense,
    EquiCorrelation,
    Identity,
    LeastFavorable,
    RankOneSpike,
    Tridiagonal,
    build,
    factorize,
    frobenius_distance_to_identity,
    sample,
    spectral_distance_to_identity,
    trace_power,
)
from .errors import (
    ConditionViolated,
    CovTestError,
    DegenerateRatio,
    DimensionMismatch,
    EmptyGrid,
    NeedAtLeastTwoSamples,
    NoFeasibleB,
    NotPositiveSemiDefinite,
    ParameterOutOfRange,
    RequiresPLessThanN,
    SingularSampleCovariance,
    TooFewSamples,
)
from .mc import (
    PowerCurve,
    PowerEstimate,
    RngStream,
    SimulationPlan,
    calibrate_null_threshold,
    empirical_kolmogorov_distance,
    estimate_power,
    power_curve,
)
from .stats import (
    TestOutcome,
    kernel_h,
    mean_T,
    power_approx_psi,
    power_asymptotic_clrt,
    statistic_CLR,
    statistic_L,
    statistic_T,
    test_clrt,
    test_psi,
    variance_T,
)

__version__ = "0.1.0"
