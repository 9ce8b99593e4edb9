"""
Persistencia de datasets en formato DPCSI1 más manifiesto lateral.

Disposición (little-endian):
    magic 'DPCSI1\\n\\0' | u32 n_s | u32 n_t | u32 count | u32 flags |
    f64 lo | f64 hi | muestras (h_v luego h_h, fila mayor, f32 real/imag)
"""

import logging
import os
import struct
from typing import Dict

import numpy as np

from config import settings
from core.chanlab import CsiDataset, NormScaler
from core.errors import DimensionMismatchError, MagicMismatchError, TruncatedFileError
from strict_models import ScenarioConfig
from utils.config_file import parse_kv_text, write_kv_file

logger = logging.getLogger(__name__)

MAGIC = b"DPCSI1\n\0"
HEADER = struct.Struct('<4I2d')
HEADER_SIZE = len(MAGIC) + HEADER.size
FLAG_NORMALIZED = 0x1
ENTRY_DTYPE = np.dtype('<c8')


UNKNOWN = 'unknown'

# campo del manifiesto → (campo de ScenarioConfig, conversión)
SCENARIO_FIELDS = {
    'kappa': ('phase_coupling', float),
    'n_paths': ('n_paths', int),
    'delay_spread': ('delay_spread', float),
    'angle_spread': ('angle_spread', float),
    'target_gcs': ('target_gcs', float),
}


def manifest_path(path: str) -> str:
    return f"{path}.manifest"


def _manifest_de(dataset: CsiDataset) -> Dict[str, object]:
    datos: Dict[str, object] = {}
    if dataset.scenario is not None:
        sc = dataset.scenario
        datos['scenario'] = sc.name
        for clave, (campo, _) in SCENARIO_FIELDS.items():
            valor = getattr(sc, campo)
            if valor is None:
                if clave != 'target_gcs':
                    datos[clave] = UNKNOWN
            else:
                datos[clave] = valor if isinstance(valor, int) else repr(valor)
    if dataset.seed is not None:
        datos['seed'] = dataset.seed
    datos.setdefault('generator_version', dataset.meta.get('generator_version', settings.GENERATOR_VERSION))
    for clave, valor in dataset.meta.items():
        datos.setdefault(clave, valor)
    datos.update(n_s=dataset.n_s, n_t=dataset.n_t, count=len(dataset))
    return datos


def _escenario_de(manifest: Dict[str, str]):
    if 'scenario' not in manifest:
        return None
    campos = {}
    for clave, (campo, conversion) in SCENARIO_FIELDS.items():
        valor = manifest.get(clave)
        campos[campo] = None if valor in (None, '', UNKNOWN) else conversion(valor)
    return ScenarioConfig(name=manifest['scenario'], **campos)


def write_dataset(dataset: CsiDataset, path: str) -> str:
    """
    Escribe el dataset y su manifiesto `<path>.manifest`.

    Returns:
        Ruta del archivo de datos
    """
    directorio = os.path.dirname(path)
    if directorio:
        os.makedirs(directorio, exist_ok=True)

    flags = FLAG_NORMALIZED if dataset.normalized else 0
    lo, hi = (dataset.scaler.lo, dataset.scaler.hi) if dataset.scaler else (0.0, 0.0)
    # [T, 2, N_s, W]: por muestra h_v y después h_h
    payload = np.stack([dataset.h_v, dataset.h_h], axis=1).astype(ENTRY_DTYPE)

    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(HEADER.pack(dataset.n_s, dataset.n_t, len(dataset), flags, lo, hi))
        f.write(np.ascontiguousarray(payload).tobytes())

    write_kv_file(manifest_path(path), _manifest_de(dataset), header='dataset DPCSI1')
    logger.info(f"💾 Dataset guardado: {path} ({len(dataset)} muestras)")
    return path


def read_dataset(path: str) -> CsiDataset:
    """Lee un archivo DPCSI1 (el manifiesto es opcional)."""
    with open(path, 'rb') as f:
        raw = f.read()

    if len(raw) < len(MAGIC) or raw[:len(MAGIC)] != MAGIC:
        raise MagicMismatchError(f"{path}: no es un archivo DPCSI1 (magic {raw[:len(MAGIC)]!r})")
    if len(raw) < HEADER_SIZE:
        raise TruncatedFileError(f"{path}: cabecera incompleta ({len(raw)} bytes)")

    n_s, n_t, count, flags, lo, hi = HEADER.unpack_from(raw, len(MAGIC))
    if n_s < 1 or n_t < 2 or n_t % 2 or count < 1:
        raise DimensionMismatchError(f"{path}: cabecera inconsistente n_s={n_s}, n_t={n_t}, count={count}")

    por_muestra = 2 * n_s * (n_t // 2) * ENTRY_DTYPE.itemsize
    esperado = HEADER_SIZE + count * por_muestra
    if len(raw) < esperado:
        disponibles = (len(raw) - HEADER_SIZE) // por_muestra
        raise TruncatedFileError(f"{path}: la cabecera declara {count} muestras pero hay {disponibles}")
    if len(raw) > esperado:
        raise DimensionMismatchError(f"{path}: {len(raw) - esperado} bytes sobrantes tras las muestras")

    datos = np.frombuffer(raw, dtype=ENTRY_DTYPE, offset=HEADER_SIZE).reshape(count, 2, n_s, n_t // 2)
    scaler = NormScaler(lo=lo, hi=hi) if flags & FLAG_NORMALIZED else None

    manifest: Dict[str, str] = {}
    if os.path.exists(manifest_path(path)):
        with open(manifest_path(path), 'r', encoding='utf-8') as f:
            manifest = parse_kv_text(f.read(), source=manifest_path(path))
    seed = int(manifest['seed']) if 'seed' in manifest else None
    meta = {k: v for k, v in manifest.items()
            if k in ('generator_version', 'mixed_from', 'imported_from')}

    logger.info(f"📂 Dataset leído: {path} ({count} muestras, {n_s}x{n_t})")
    return CsiDataset(n_s=n_s, n_t=n_t, h_v=datos[:, 0].copy(), h_h=datos[:, 1].copy(),
                      scenario=_escenario_de(manifest), scaler=scaler, seed=seed, meta=meta)
