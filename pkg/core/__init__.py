"""
Motores del laboratorio: canal, red, estimadores MI, entrenamiento,
cuantización y evaluación
"""

__all__ = ['chanlab', 'dataset_io', 'direnet', 'checkpoint', 'miest', 'trainer', 'quant', 'evalkit']
