"""Exception and warning types shared across the package."""


class DirinetError(Exception):
    """Base class for all errors raised by this package."""


class InputError(DirinetError):
    """Malformed or inconsistent input data (files, arguments)."""


class ProtocolError(DirinetError):
    """A run violates the estimation protocol (e.g. empty observed set)."""


class CheckpointError(DirinetError):
    """A checkpoint file is corrupt, truncated, or incompatible."""


class UnreachableNodesWarning(UserWarning):
    """Some unobserved nodes have no undirected path to any observed node."""


class IsolatedNodesWarning(UserWarning):
    """Some nodes have zero total degree; their transition rows are all-zero."""


class SpeedRangeWarning(UserWarning):
    """Measured speeds fall outside the plausible 0-120 mph range."""
