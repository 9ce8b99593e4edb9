"""
Configuraciones del laboratorio de CSI dual-polarizada
"""

from .escenarios import (
    ESCENARIOS, get_escenario, get_escenarios_disponibles, get_descripcion_escenario
)
from .settings import (
    DEFAULT_NS, DEFAULT_NT, DEFAULT_SIGMA,
    LEARNING_RATE, LAMBDA_MI, EPOCHS, BATCH_SIZE,
    LOG_LEVEL, LOG_FORMAT
)

__all__ = [
    'ESCENARIOS', 'get_escenario', 'get_escenarios_disponibles', 'get_descripcion_escenario',
    'DEFAULT_NS', 'DEFAULT_NT', 'DEFAULT_SIGMA',
    'LEARNING_RATE', 'LAMBDA_MI', 'EPOCHS', 'BATCH_SIZE',
    'LOG_LEVEL', 'LOG_FORMAT'
]
