"""Exception hierarchy shared by all modules."""


class WassertestError(Exception):
    """Base class for all library errors."""


# -- metric spaces and distributions ----------------------------------------

class MetricError(WassertestError):
    """Invalid distance matrix."""


class NegativeDistance(MetricError):
    pass


class AsymmetryError(MetricError):
    pass


class NonzeroDiagonal(MetricError):
    pass


class TriangleViolation(MetricError):
    """Carries a witnessing triple (a, b, c) with d(a,c) > d(a,b) + d(b,c)."""

    def __init__(self, a: int, b: int, c: int, lhs: float, rhs: float):
        self.triple = (a, b, c)
        super().__init__(
            f"triangle inequality violated: d({a},{c})={lhs} > d({a},{b})+d({b},{c})={rhs}"
        )


class ZeroDiameter(MetricError):
    """All pairwise distances are zero on a space with two or more points."""


class SpaceMismatch(WassertestError):
    """Two distributions do not live on the same metric space."""


class OverlappingBalls(WassertestError):
    """Packing lower bound requested for balls that are not pairwise disjoint."""


# -- nets and hierarchies ----------------------------------------------------

class EpsilonOutOfRange(WassertestError):
    """Proximity parameter produces an empty level range."""


class LevelOutOfRange(WassertestError):
    pass


class TooLargeForExact(WassertestError):
    """Exhaustive net/packing search is limited to small point counts."""


# -- L1 sub-testers ----------------------------------------------------------

class InsufficientSamples(WassertestError):
    """Sample batch smaller than the budget formula requires."""


# -- generators ----------------------------------------------------------------

class OddSupport(WassertestError):
    pass


class SizeMismatch(WassertestError):
    pass


class ResolutionIncompatible(WassertestError):
    pass


class NoAnchorPoint(WassertestError):
    """No point of the space lies outside every half-scale ball of the net."""


class ZeroClusterMass(WassertestError):
    """Base distribution places mass on a cluster where the reference has none."""


class SamplerExhausted(WassertestError):
    """A finite sample oracle cannot produce the requested number of draws."""


# -- warnings ------------------------------------------------------------------

class TruncationExhausted(UserWarning):
    """Truncation removed every element of the vector."""


class DoublingConditionWarning(UserWarning):
    """Instance tester invoked on a distribution with unbounded doubling ratio."""
