"""Exception types shared across the package.

Every error raised on a contract violation derives from :class:`CovTestError`,
so callers can catch one base type. Most errors are also ``ValueError``
subclasses because they signal invalid inputs.
"""


class CovTestError(Exception):
    """Base class for all covtest errors."""


class ParameterOutOfRange(CovTestError, ValueError):
    """A scalar or vector parameter violates its documented range."""


class DimensionMismatch(CovTestError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class NotPositiveSemiDefinite(CovTestError, ValueError):
    """A matrix required to be PSD has an eigenvalue below -1e-10 * spectral norm."""


class NeedAtLeastTwoSamples(CovTestError, ValueError):
    """The pairwise statistic requires n >= 2 rows."""


class RequiresPLessThanN(CovTestError, ValueError):
    """Likelihood-ratio statistics are only defined when p < n."""


class SingularSampleCovariance(CovTestError, ValueError):
    """The sample covariance matrix is numerically singular (eigenvalue <= 1e-12)."""


class DegenerateRatio(CovTestError, ValueError):
    """The dimension ratio p/n is within 1e-8 of 1, where the CLR scaling blows up."""


class ConditionViolated(CovTestError, ValueError):
    """The perturbation size b violates the condition keeping the divergence finite."""


class NoFeasibleB(CovTestError, RuntimeError):
    """No perturbation size satisfies the divergence bound (should not occur)."""


class EmptyGrid(CovTestError, ValueError):
    """A power curve was requested over an empty model grid."""


class TooFewSamples(CovTestError, ValueError):
    """The empirical distribution diagnostic needs at least 100 samples."""
