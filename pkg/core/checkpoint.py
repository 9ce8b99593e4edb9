"""
Checkpoints DPCKPT1.

    magic 'DPCKPT1\\0' | u32 len + bloque UTF-8 clave=valor (ModelConfig + meta.*) |
    registros de tensor (u32 len nombre, nombre, u32 rango, u32 dims..., f32 LE) |
    u64 paso de entrenamiento
"""

import logging
import os
import struct
from typing import Dict, List, Tuple

import numpy as np
import torch

from core.direnet import ParameterStore
from core.errors import CheckpointFormatError
from strict_models import ModelConfig
from utils.config_file import parse_kv_text

logger = logging.getLogger(__name__)

MAGIC = b"DPCKPT1\0"
U32 = struct.Struct('<I')
U64 = struct.Struct('<Q')
MODEL_PREFIX = 'model.'
META_PREFIX = 'meta.'


def _registro(nombre: str, tensor: torch.Tensor) -> bytes:
    datos = tensor.detach().cpu().to(torch.float32).contiguous().numpy()
    nombre_b = nombre.encode('utf-8')
    partes = [U32.pack(len(nombre_b)), nombre_b, U32.pack(datos.ndim)]
    partes.extend(U32.pack(d) for d in datos.shape)
    partes.append(datos.astype('<f4').tobytes())
    return b''.join(partes)


def write_checkpoint(store: ParameterStore, path: str) -> str:
    directorio = os.path.dirname(path)
    if directorio:
        os.makedirs(directorio, exist_ok=True)

    kv = dict(store.config.to_kv())
    kv[f'{META_PREFIX}seed'] = str(store.seed)
    for clave, valor in store.meta.items():
        kv[f'{META_PREFIX}{clave}'] = str(valor)
    bloque = ''.join(f"{k}={v}\n" for k, v in kv.items()).encode('utf-8')

    tmp = f"{path}.tmp"
    with open(tmp, 'wb') as f:
        f.write(MAGIC)
        f.write(U32.pack(len(bloque)))
        f.write(bloque)
        for nombre, t in list(store.params.items()) + list(store.buffers.items()):
            f.write(_registro(MODEL_PREFIX + nombre, t))
        for nombre, t in store.extra.items():
            f.write(_registro(nombre, t))
        f.write(U64.pack(int(store.step)))
    os.replace(tmp, path)
    logger.debug(f"💾 Checkpoint {path} (paso {store.step})")
    return path


class _Lector:
    def __init__(self, raw: bytes, path: str):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointFormatError(f"{self.path}: archivo truncado en el byte {self.pos}")
        trozo = self.raw[self.pos:self.pos + n]
        self.pos += n
        return trozo

    def u32(self) -> int:
        return U32.unpack(self.take(4))[0]

    @property
    def remaining(self) -> int:
        return len(self.raw) - self.pos


def read_checkpoint(path: str) -> ParameterStore:
    with open(path, 'rb') as f:
        raw = f.read()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: no es un checkpoint DPCKPT1")

    lector = _Lector(raw, path)
    lector.take(len(MAGIC))
    bloque = lector.take(lector.u32()).decode('utf-8')
    kv = parse_kv_text(bloque, source=path)

    tensores: List[Tuple[str, torch.Tensor]] = []
    while lector.remaining > U64.size:
        nombre = lector.take(lector.u32()).decode('utf-8')
        rango = lector.u32()
        forma = tuple(lector.u32() for _ in range(rango))
        n = int(np.prod(forma, dtype=np.int64)) if forma else 1
        datos = np.frombuffer(lector.take(4 * n), dtype='<f4').reshape(forma)
        tensores.append((nombre, torch.from_numpy(datos.astype(np.float32))))
    if lector.remaining != U64.size:
        raise CheckpointFormatError(f"{path}: falta el contador de pasos")
    step = U64.unpack(lector.take(U64.size))[0]

    meta = {k[len(META_PREFIX):]: v for k, v in kv.items() if k.startswith(META_PREFIX)}
    config = ModelConfig.from_kv({k: v for k, v in kv.items() if not k.startswith(META_PREFIX)})

    modelo: Dict[str, torch.Tensor] = {}
    extra: Dict[str, torch.Tensor] = {}
    for nombre, t in tensores:
        if nombre.startswith(MODEL_PREFIX):
            modelo[nombre[len(MODEL_PREFIX):]] = t
        else:
            extra[nombre] = t
    params = {k: v for k, v in modelo.items() if not k.endswith(('running_mean', 'running_var'))}
    buffers = {k: v for k, v in modelo.items() if k.endswith(('running_mean', 'running_var'))}

    seed = int(meta.pop('seed', 0))
    logger.info(f"📂 Checkpoint leído: {path} (paso {step}, {len(tensores)} tensores)")
    return ParameterStore(config=config, params=params, buffers=buffers, seed=seed, step=step,
                          extra=extra, meta=meta)
