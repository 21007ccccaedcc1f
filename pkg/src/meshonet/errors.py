"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MeshONetError(Exception):
    exit_code = 1


class ConfigError(MeshONetError, ValueError):
    exit_code = 2


class ContractError(MeshONetError, ValueError):
    """A caller violated an operation's precondition (shapes, counts, tags)."""

    exit_code = 2


class DomainError(MeshONetError, ValueError):
    """Geometry parameter outside its family range, or an inconsistent boundary."""

    exit_code = 3


class GeometryError(DomainError):
    pass


class SolverError(MeshONetError):
    exit_code = 4


class DivergenceError(SolverError, ArithmeticError):
    exit_code = 5


class NumericError(MeshONetError, ArithmeticError):
    exit_code = 5


class MeshFormatError(MeshONetError, ValueError):
    exit_code = 2


class InvalidMeshError(MeshONetError):
    exit_code = 6


class TrainingDivergedError(NumericError):
    """Loss became non-finite; carries the iteration and the last good model."""

    def __init__(self, iteration, last_good):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.last_good = last_good
