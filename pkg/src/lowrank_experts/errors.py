"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller broke a documented precondition (shape, symmetry, definiteness)."""


class DegenerateInputError(ContractError):
    """Input is geometrically degenerate, e.g. slab normals that do not span."""


class NumericError(ArithmeticError):
    """An iterative routine failed to converge or produced an invalid value."""

    def __init__(self, message, round_index=None):
        super().__init__(message)
        self.message = message
        self.round_index = round_index

    def __str__(self):
        msg = super().__str__()
        if self.round_index is not None:
            return f"round {self.round_index}: {msg}"
        return msg
