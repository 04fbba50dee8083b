"""
Exception hierarchy for seprank.

Every error raised on purpose by the library derives from SeprankError so the
CLI can map it to an exit code.
"""


class SeprankError(Exception):
    """Base class for all seprank errors"""


class InputError(SeprankError, ValueError):
    """Invalid argument, shape or value"""


class SchemaError(InputError):
    """Architecture config failed validation; carries every (field_path, message)"""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{path}: {message}" for path, message in self.errors]
        super().__init__("Config schema errors:\n  " + "\n  ".join(lines))


class AssumptionError(InputError):
    """A witness construction assumption does not hold"""

    def __init__(self, assumption, detail):
        self.assumption = assumption
        super().__init__(f"Assumption violated ({assumption}): {detail}")


class CapabilityError(SeprankError):
    """Request exceeds a configured cap or a feasibility limit"""


class SearchExhausted(SeprankError):
    """Randomized witness search ran out of trials (not a refutation)"""
