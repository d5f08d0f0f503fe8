"""OpenDRIVE map processing, sensor preprocessing, a rule-based driving expert,
a kinematic scenario harness and toy fusion numerics."""

__version__ = "0.1.0"


class ContractError(ValueError):
    """Raised when arguments violate an operation's shape or domain contract."""
