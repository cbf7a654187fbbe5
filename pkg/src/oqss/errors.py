"""Exception taxonomy shared across the package.

Each failure class maps to a distinct CLI exit code (see ``oqss.cli``), so
keep the hierarchy flat and the meanings disjoint.
"""


class OqssError(Exception):
    """Base class for all package errors."""


class ContractError(OqssError):
    """A caller violated a documented precondition (bad shapes, bad modes...)."""


class CapacityError(OqssError):
    """An input exceeds a documented size/photon-number ceiling."""


class ValidityError(OqssError):
    """A value breaks its own invariant (e.g. a non-symplectic transform)."""


class DegenerateHeraldError(OqssError):
    """A heralding pattern has (numerically) zero probability."""


class PlanningError(OqssError):
    """No layer plan exists for the requested budget under the constraints."""


class SolverError(OqssError):
    """An optimization stage finished below its configured fidelity floor."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConsistencyError(OqssError):
    """Backward and forward passes disagree beyond tolerance (bug trap)."""


class FormatError(OqssError):
    """A persisted file does not parse as the expected format."""
