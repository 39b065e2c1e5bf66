"""Exception types shared across the library."""


class HyplabError(Exception):
    """Base class for all library errors."""


class CriticalPointError(HyplabError):
    """Derivative requested too close to the critical set.

    Signals that log|Df|^-1 must be treated as +inf by the caller.
    """


class BranchResolutionFailure(HyplabError):
    """A preimage bracket could not be established on a branch.

    Usually means the branch partition of the map is mis-specified.
    """


class PreimageExplosion(HyplabError):
    """Preimage tree exceeded its node budget."""


class DomainExit(HyplabError):
    """A perturbed point left an interval domain (never clamped)."""


class NoFeasibleEta(HyplabError):
    """No eta on the search grid satisfies the contraction inequality.

    Happens when sigma is too close to 1.
    """


class BinMismatch(HyplabError):
    """Histogram operands have different domains or bin counts."""


class DegenerateFit(HyplabError):
    """Decay fit requested on data with no spread (r^2 undefined)."""


class CalibrationFailure(HyplabError):
    """Automatic (sigma, delta) selection failed for this map."""


class ConfigError(HyplabError):
    """Invalid experiment configuration."""
