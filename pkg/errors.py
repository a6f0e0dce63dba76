"""Exception hierarchy shared by the library modules and the CLI."""
from typing import Iterable, Optional


class ChaosRashomonError(Exception):
    """Base class; `exit_code` is what the CLI returns for an uncaught instance."""
    exit_code = 3


class ConfigError(ChaosRashomonError, ValueError):
    exit_code = 2


class ParseError(ConfigError):
    def __init__(self, message: str, row: Optional[int] = None, column: Optional[int] = None) -> None:
        self.row = row
        self.column = column
        location = ""
        if row is not None:
            location = f" (row {row}" + (f", column {column})" if column is not None else ")")
        super().__init__(f"{message}{location}")


class ShapeError(ChaosRashomonError, ValueError):
    pass


class PreconditionError(ChaosRashomonError, ValueError):
    pass


class DivergedIntegrationError(ChaosRashomonError, ArithmeticError):
    def __init__(self, system: str, step: int) -> None:
        self.system = system
        self.step = step
        super().__init__(f"{system} integration produced a non-finite state at step {step}")


class RolloutDivergedError(ChaosRashomonError, ArithmeticError):
    def __init__(self, step: int) -> None:
        self.step = step
        super().__init__(f"autonomous rollout produced a non-finite forecast at step {step}")


class ReadoutError(ChaosRashomonError, ArithmeticError):
    pass


class SpectralRadiusError(ChaosRashomonError, ArithmeticError):
    pass


class DegenerateSeriesError(ChaosRashomonError, ValueError):
    pass


class InsufficientDataError(ChaosRashomonError, ValueError):
    pass


class DegenerateColumnError(ChaosRashomonError, ValueError):
    def __init__(self, k: int) -> None:
        self.k = k
        super().__init__(f"fewer than two finite losses at horizon {k}")


class UnsupportedError(ChaosRashomonError, NotImplementedError):
    pass


class PoolError(ChaosRashomonError, RuntimeError):
    pass


class StageError(ChaosRashomonError, RuntimeError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


class MissingArtifactError(ChaosRashomonError):
    exit_code = 4

    def __init__(self, missing: Iterable[str], rerun: Iterable[str]) -> None:
        self.missing = list(missing)
        self.rerun = sorted(set(rerun))
        super().__init__(
            f"missing artifacts: {', '.join(self.missing)}; rerun stage(s): {', '.join(self.rerun)}"
        )


class UnsupportedOptimizerError(UnsupportedError):
    pass
