import logging
from functools import wraps

CONFIG_ATTRIBUTES = ('config', 'train_config', 'scenario', 'seed', 'step')


def log_config_on_error(func):
    """Registra la configuración del objeto que falla y relanza la excepción."""
    @wraps(func)
    def wrapper(self, *args, **kwargs):
        try:
            return func(self, *args, **kwargs)
        except Exception as e:
            logging.error(f"Error in {func.__name__}: {e}")
            atributos = ', '.join(
                f"{nombre}: {getattr(self, nombre)!r}" for nombre in CONFIG_ATTRIBUTES if hasattr(self, nombre)
            )
            logging.error(f"Attributes - {atributos or 'N/A'}")
            raise
    return wrapper
