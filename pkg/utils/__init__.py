"""
Utilidades del laboratorio de CSI dual-polarizada
"""

from .config_file import load_config_file, parse_kv_text, write_kv_file, write_manifest
from .csv_output import ReportWriter
from .decorators import log_config_on_error

__all__ = [
    'load_config_file', 'parse_kv_text', 'write_kv_file', 'write_manifest',
    'ReportWriter', 'log_config_on_error'
]
