"""Error taxonomy shared across the simulator."""


class ConfigError(ValueError):
    """Invalid configuration: bad dimensions, unknown names, malformed options."""


class ShapeError(ValueError):
    """Array shape does not match the model architecture."""


class DataError(ValueError):
    """Invalid data: label ids out of range, empty references, and similar."""


class DecodeError(ValueError):
    """Payload byte stream is truncated, corrupt, or has a bad magic/version."""


class EligibilityError(RuntimeError):
    """Client selection or batch formation violated an eligibility guarantee."""


class ContractError(RuntimeError):
    """An operation was called outside its stated precondition."""
