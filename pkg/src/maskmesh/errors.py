"""Shared exception types."""


class ConfigurationError(Exception):
    """Invalid static configuration (dims, seeds, slot sizes...)."""


class ContractViolation(Exception):
    """A caller broke an API precondition (shape mismatch, bad coefficients...)."""


class DecodeError(Exception):
    """A wire frame could not be decoded; the frame is discarded."""


class LearnerFault(Exception):
    """Unrecoverable training failure (NaN loss, env fault)."""
