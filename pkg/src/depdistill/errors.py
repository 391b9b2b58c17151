"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments outside its contract."""


class ConlluParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmbeddingFormatError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingError(RuntimeError):
    """Non-finite loss or gradient during optimisation."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class ModelLoadError(ValueError):
    pass


class SizingError(ValueError):
    def __init__(self, message, closest_fraction=None):
        self.closest_fraction = closest_fraction
        super().__init__(message)


class ConfigError(ValueError):
    pass
