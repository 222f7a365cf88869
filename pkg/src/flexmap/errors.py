"""Typed error taxonomy.

Every failure the library can signal maps to one of these classes so callers
(and the CLI exit-code logic) can dispatch on type rather than message text.
"""

from __future__ import annotations


class FlexmapError(Exception):
    """Base class for all library errors."""


# --- input / configuration -------------------------------------------------

class ParseError(FlexmapError):
    """Malformed network, history, scheme, or config document."""


class TopologyError(FlexmapError):
    """Branch set is not a tree rooted at the slack bus."""


class UnitError(FlexmapError):
    """A DER record is inconsistent (unknown kind, bad limits, bad node)."""


class BadParameter(FlexmapError):
    """A numeric parameter is outside its documented domain."""


class ConfigError(FlexmapError):
    """Run configuration is unusable (missing files, bad combination)."""


# --- numerics ---------------------------------------------------------------

class SingularVoltage(FlexmapError):
    """A linearization voltage entry is zero; injection currents undefined."""


class DimensionMismatch(FlexmapError):
    """Vector/matrix shapes disagree with the network or system dimensions."""


class NonConvergence(FlexmapError):
    """Fixed-point power-flow iteration failed to converge."""


class NumericalInstability(FlexmapError):
    """Row arithmetic produced values too corrupted to certify."""


# --- constraint assembly ----------------------------------------------------

class BadSegmentCount(FlexmapError):
    """Too few segments to inscribe a polygon in a disc."""


class InfeasibleBase(FlexmapError):
    """Initial DER setpoint violates the unit's own capability set."""


class BaseViolation(FlexmapError):
    """Initial network state violates an operating limit being linearized."""


# --- polytope computations ---------------------------------------------------

class UnknownVariable(FlexmapError):
    """Referenced variable label is not present in the system."""


class InfeasibleSystem(FlexmapError):
    """The inequality system has no feasible point."""


class EmptyRegion(FlexmapError):
    """A polygon operation produced the empty set."""


class UnboundedRegion(FlexmapError):
    """The 2-variable system describes an unbounded region."""


class DegenerateReference(FlexmapError):
    """Reference region has zero area; fill factor undefined."""


class SingularCoupling(FlexmapError):
    """GSK directions are blind to the PCC map; restriction not invertible."""


# --- uncertainty -------------------------------------------------------------

class EmptyDistribution(FlexmapError):
    """An empirical distribution carries no samples."""


class MissingMargin(FlexmapError):
    """A PV unit has no margin although margins were requested."""


# --- sampling ----------------------------------------------------------------

class NoFeasibleSamples(FlexmapError):
    """Monte Carlo run found no sample passing the operating limits."""
