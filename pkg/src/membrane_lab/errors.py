"""Exception hierarchy shared by all modules."""


class MembraneLabError(Exception):
    """Base class for every error raised by membrane_lab."""


class ConfigError(MembraneLabError):
    """A configuration value could not be parsed or is out of range."""

    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.line = line
        where = f"{field}" + (f" (line {line})" if line is not None else "")
        super().__init__(f"{where}: {message}")


class ValidationError(MembraneLabError):
    """A standing model assumption failed on a sampled point."""

    def __init__(self, invariant: str, message: str):
        self.invariant = invariant
        super().__init__(f"[{invariant}] {message}")


class EllipticityViolation(ValidationError):
    def __init__(self, message: str):
        super().__init__("ellipticity", message)


class NonPositiveDensity(ValidationError):
    def __init__(self, message: str):
        super().__init__("density-positive", message)


class WindowTooSmall(MembraneLabError):
    pass


class StepTooLarge(MembraneLabError):
    pass


class FrozenCoefficientRange(MembraneLabError):
    pass


class QueryBeyondHorizon(MembraneLabError):
    pass


class NoExitBeforeCap(MembraneLabError):
    pass


class DensityZero(MembraneLabError):
    pass


class GammaFloorViolation(MembraneLabError):
    pass


class EmptySample(MembraneLabError):
    pass


class MissingLocalTimes(MembraneLabError):
    pass


class RegimeMismatch(MembraneLabError):
    pass


class SimulationError(MembraneLabError):
    """A kernel reported a failure on a specific path; carries replay info."""

    def __init__(self, message: str, path_index: int, seed: int):
        self.path_index = path_index
        self.seed = seed
        super().__init__(f"{message} (path {path_index}, seed {seed})")
