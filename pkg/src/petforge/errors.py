"""Exception types raised across petforge."""


class PetForgeError(Exception):
    """Base class for all petforge errors."""


class DimensionError(PetForgeError, ValueError):
    pass


class ConfigError(PetForgeError, ValueError):
    pass


class InputError(PetForgeError, ValueError):
    pass


class ContractError(PetForgeError, RuntimeError):
    pass


class FormatError(PetForgeError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(PetForgeError, ArithmeticError):
    pass
