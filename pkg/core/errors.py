"""
Jerarquía de errores del laboratorio
"""

from typing import Optional


class CsiLabError(Exception):
    """Raíz de todos los errores propios del laboratorio."""


class DimensionError(CsiLabError, ValueError):
    """Dimensiones de grilla o de tensor inválidas."""


class CsiDomainError(CsiLabError, ValueError):
    """Valor fuera del dominio de una operación (filas nulas, rangos degenerados)."""


class ConfigurationError(CsiLabError, ValueError):
    """Configuración imposible (por ejemplo M = 0)."""


class DatasetFormatError(CsiLabError):
    """Archivo DPCSI1 ilegible."""


class MagicMismatchError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class DimensionMismatchError(DatasetFormatError):
    pass


class CheckpointFormatError(CsiLabError):
    """Archivo DPCKPT1 ilegible."""


class FeedbackFormatError(CsiLabError):
    """Carga útil de realimentación truncada o con cabecera inválida."""


class BatchTooSmallError(CsiLabError, ValueError):
    """CLUB necesita al menos dos muestras para formar pares negativos."""


class NonFiniteError(CsiLabError):
    """Activación o pérdida no finita."""

    def __init__(self, layer: str, message: Optional[str] = None):
        self.layer = layer
        super().__init__(message or f"Valor no finito en la capa '{layer}'")


class TrainingDivergedError(CsiLabError):
    """Entrenamiento abortado; conserva la ruta del último checkpoint válido."""

    def __init__(self, message: str, checkpoint_path: Optional[str] = None):
        self.checkpoint_path = checkpoint_path
        super().__init__(message)
