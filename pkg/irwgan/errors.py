"""
IrwGAN Errors
Exception hierarchy shared by the library and the command line.

Every error carries the process exit code the CLI reports for it:
- 2 usage / configuration
- 3 training divergence
- 4 missing artifact (checkpoint, run directory)
- 5 I/O and dataset problems
"""

from typing import Optional


class IrwError(Exception):
    """Base class for all IrwGAN errors"""

    exit_code: int = 1


class ConfigError(IrwError):
    """Invalid configuration key or value"""

    exit_code = 2

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class DivergenceError(IrwError):
    """A loss or gradient became non-finite"""

    exit_code = 3

    def __init__(self, message: str, step: Optional[int] = None, term: Optional[str] = None):
        super().__init__(message)
        self.step = step
        self.term = term


class MissingArtifactError(IrwError):
    """A run directory, checkpoint or report is absent"""

    exit_code = 4


class ArtifactIOError(IrwError):
    """Reading or writing a run artifact failed"""

    exit_code = 5


class DatasetError(IrwError):
    """An image directory or label file could not be turned into a dataset"""

    exit_code = 5


class ShapeError(IrwError, ValueError):
    """Tensor or dataset shapes do not match what an operation expects"""

    exit_code = 5
