"""
Lectura y escritura de archivos planos `clave = valor`
(configuración de corrida, manifiestos de dataset y de corrida).
"""

import logging
import os
from typing import Dict, Optional

logger = logging.getLogger(__name__)


def parse_kv_text(text: str, source: str = '<texto>') -> Dict[str, str]:
    """
    Parsea líneas `clave = valor`; ignora líneas vacías y comentarios `#`.

    Args:
        text: Contenido UTF-8
        source: Nombre usado en los mensajes de error

    Returns:
        Diccionario clave → valor (cadenas, sin espacios en los extremos)
    """
    datos: Dict[str, str] = {}
    for numero, linea in enumerate(text.splitlines(), 1):
        linea = linea.split('#', 1)[0].strip()
        if not linea:
            continue
        if '=' not in linea:
            raise ValueError(f"{source}:{numero}: se esperaba 'clave = valor', recibido '{linea}'")
        clave, valor = linea.split('=', 1)
        clave = clave.strip().replace('-', '_')
        if not clave:
            raise ValueError(f"{source}:{numero}: clave vacía")
        datos[clave] = valor.strip()
    return datos


def load_config_file(path: str) -> Dict[str, str]:
    """Carga un archivo de configuración de corrida."""
    with open(path, 'r', encoding='utf-8') as f:
        datos = parse_kv_text(f.read(), source=path)
    logger.debug(f"Configuración leída de {path}: {len(datos)} claves")
    return datos


def write_kv_file(path: str, datos: Dict[str, object], header: Optional[str] = None) -> str:
    """Escribe un diccionario como líneas `clave=valor` (orden de inserción)."""
    directorio = os.path.dirname(path)
    if directorio:
        os.makedirs(directorio, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        if header:
            f.write(f"# {header}\n")
        for clave, valor in datos.items():
            f.write(f"{clave}={valor}\n")
    return path


def write_manifest(run_dir: str, datos: Dict[str, object], name: str = 'run_manifest.txt') -> str:
    """Manifiesto de corrida en la raíz del directorio de la corrida."""
    ruta = write_kv_file(os.path.join(run_dir, name), datos, header='manifiesto de corrida')
    logger.info(f"💾 Manifiesto: {ruta}")
    return ruta
