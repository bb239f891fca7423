"""Exception types shared across the package."""


class OccmatchError(Exception):
    """Base class; the CLI reports these as one-line errors."""


class InvalidConfig(OccmatchError, ValueError):
    pass


class ParseError(OccmatchError, ValueError):
    pass


class ShapeMismatch(OccmatchError, ValueError):
    pass


class NonFiniteLoss(OccmatchError, FloatingPointError):
    def __init__(self, step, detail=""):
        self.step = step
        super().__init__(f"non-finite loss at step {step}{': ' + detail if detail else ''}")


class IoError(OccmatchError, OSError):
    pass
