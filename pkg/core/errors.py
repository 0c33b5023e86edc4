"""
Exception types for the FedIN simulator
"""
from typing import Optional


class FedINError(Exception):
    """Base class for simulator errors"""


class DimensionError(FedINError, ValueError):
    """Tensor or feature shapes do not line up"""


class ValidationError(FedINError, ValueError):
    """An argument value is outside its allowed range"""


class ContractError(FedINError):
    """A caller broke an operation's precondition"""


class ConfigError(FedINError):
    """Experiment configuration is invalid"""

    def __init__(self, message: str, key_path: Optional[str] = None):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}" if key_path else message)


class IngestionError(FedINError):
    """Dataset file could not be parsed"""

    def __init__(self, message: str, path: str, offset: int):
        self.path = path
        self.offset = offset
        super().__init__(f"{path} @ byte {offset}: {message}")


class CsvFormatError(FedINError):
    """Metrics CSV is malformed"""

    def __init__(self, message: str, path: str, line: int):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class ClientFailure(FedINError):
    """A client round raised; the round is aborted"""

    def __init__(self, client_id: int, round_num: int, cause: BaseException):
        self.client_id = client_id
        self.round_num = round_num
        self.cause = cause
        super().__init__(f"client {client_id} failed in round {round_num}: {cause!r}")
