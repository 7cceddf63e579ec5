"""Exception types raised across the package.

Every error carries enough context (identifiers, column names, offending
values) for a caller to locate the problem in the input files without a
debugger.
"""


class NutrimapError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(NutrimapError):
    """An input table is missing a required column or has the wrong layout."""


class ValidationError(NutrimapError):
    """A record violates a data invariant (bad weight, empty roster, ...)."""


class ConsistencyError(NutrimapError):
    """Cross-record contradiction, e.g. one cluster mapped to two areas."""


class ConversionError(NutrimapError):
    """A reported unit cannot be converted to grams."""


class RequirementLookupError(NutrimapError):
    """No energy requirement band matches a household member."""


class NoDataError(NutrimapError):
    """An estimator was asked to run on an empty set of observations."""


class SingleClusterError(NutrimapError):
    """Linearized variance is undefined for a single-cluster area."""


class BoundaryError(NutrimapError):
    """Logit-scale transform requested at a prevalence of exactly 0 or 1."""


class GraphError(NutrimapError):
    """Malformed adjacency structure (asymmetry, unknown node, no edges)."""


class AllocationError(NutrimapError):
    """A subsampling design requests more units than a stratum contains."""


class NumericalError(NutrimapError):
    """A posterior evaluation produced NaN; names the offending term."""


class SamplingError(NutrimapError):
    """The sampler could not start (e.g. no finite initial point)."""
