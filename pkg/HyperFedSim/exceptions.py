class HyperFedSimError(Exception):
    """
    Base class for every error raised by HyperFedSim.
    """


class ShapeError(HyperFedSimError, ValueError):
    pass


class NonFiniteError(HyperFedSimError, ArithmeticError):
    pass


class ArchitectureError(HyperFedSimError, ValueError):
    pass


class RegistryError(HyperFedSimError, KeyError):
    def __str__(self) -> str:
        # KeyError quotes its argument; keep messages readable.
        return str(self.args[0]) if self.args else ""


class StaleUpdateError(RegistryError):
    pass


class DatasetError(HyperFedSimError, ValueError):
    pass


class PartitionError(HyperFedSimError, ValueError):
    pass


class ConfigError(HyperFedSimError, ValueError):
    def __init__(self, message: str, line: int = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(HyperFedSimError):
    pass
