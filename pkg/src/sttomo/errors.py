"""Exception hierarchy.

Every failure mode that a caller may want to branch on has its own class;
they all derive from :class:`SttomoError`.
"""


class SttomoError(Exception):
    """Base class for all library errors."""


class Singular(SttomoError):
    """Metric matrix too badly conditioned to invert."""


class GridTooCoarse(SttomoError):
    """Sampling lattice cannot resolve the narrowest feature of a field."""


class NotBoundaryFixing(SttomoError):
    """A diffeomorphism moves the boundary of the domain."""


class NoExit(SttomoError):
    """A ray did not leave the enclosing ball within its parameter budget."""


class GrazingRay(SttomoError):
    """A ray meets the boundary tangentially (double root of the exit event)."""


class NoConvergence(SttomoError):
    """Newton shooting did not converge."""


class NonsmoothTau(SttomoError):
    """Finite-difference stencils of the time separation disagree."""


class DegenerateRoot(SttomoError):
    """The eikonal quadratic for the normal derivative has a near-double root."""


class FoldDetected(SttomoError):
    """A straightening map has non-positive Jacobian determinant."""


class FormViolation(SttomoError):
    """Zeroing the block pattern of a tensor difference removed too much mass."""


class ScatteringMismatch(SttomoError):
    """Two metrics have different exit data for the same entry state."""


class SingularDirection(SttomoError):
    """The direction construction has a vanishing denominator."""


class IllConditioned(SttomoError):
    """The two time-slot values chosen for component extraction are too close."""


class KViolated(SttomoError):
    """The Sobolev ratio precondition of the cone experiment fails."""


class RankDeficient(SttomoError):
    """A recovery matrix lost rank."""


class ConfigError(SttomoError):
    """Invalid experiment configuration."""
