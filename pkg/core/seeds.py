"""
Sub-flujos aleatorios con nombre derivados de una única semilla de corrida
"""

import zlib

import numpy as np
import torch

# Nombres de sub-flujos usados por los distintos módulos
STREAMS = ('data', 'init', 'batching', 'mi_init', 'rate', 'gradcheck', 'split')


def substream_seed(seed: int, name: str) -> int:
    """Semilla entera (63 bits) del sub-flujo `name` de la corrida `seed`."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode('utf-8'))])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


class SeedStreams:
    """
    Expande la semilla de corrida en generadores independientes por nombre.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def seed_for(self, name: str) -> int:
        return substream_seed(self.seed, name)

    def rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng(self.seed_for(name))

    def torch_generator(self, name: str) -> torch.Generator:
        gen = torch.Generator()
        gen.manual_seed(self.seed_for(name))
        return gen

    def as_dict(self) -> dict:
        return {f"seed_{name}": self.seed_for(name) for name in STREAMS}
