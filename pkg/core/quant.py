"""
Cuantización uniforme por flujo del triple latente y contabilidad de bits.
"""

import logging
import struct
from fractions import Fraction
from typing import Dict, Iterable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import settings
from core.direnet import LatentTriple, decode_arrays, encode_arrays, latent_length, nominal_latent_length
from core.errors import CsiDomainError, FeedbackFormatError
from strict_models import STREAM_NAMES, QuantConfig

logger = logging.getLogger(__name__)

STREAM_HEADER = struct.Struct('<Bdd')


def _validar(bits: int, rango: Tuple[float, float]):
    if not settings.QUANT_MIN_BITS <= bits <= settings.QUANT_MAX_BITS:
        raise CsiDomainError(f"Bits por elemento fuera de [{settings.QUANT_MIN_BITS}, {settings.QUANT_MAX_BITS}]: {bits}")
    lo, hi = rango
    if not lo < hi:
        raise CsiDomainError(f"Rango de cuantización degenerado: ({lo}, {hi})")


def quantize(v, bits: int, rango: Tuple[float, float]) -> np.ndarray:
    """code = round((clamp(v, lo, hi) − lo)/(hi − lo)·(2^q − 1)); nunca falla fuera de rango."""
    _validar(bits, rango)
    lo, hi = rango
    niveles = (1 << bits) - 1
    x = (np.clip(np.asarray(v, dtype=np.float64), lo, hi) - lo) / (hi - lo)
    return np.rint(x * niveles).astype(np.uint32)


def dequantize(codes, bits: int, rango: Tuple[float, float]) -> np.ndarray:
    """v̂ = lo + code/(2^q − 1)·(hi − lo)"""
    _validar(bits, rango)
    lo, hi = rango
    niveles = (1 << bits) - 1
    return lo + np.asarray(codes, dtype=np.float64) / niveles * (hi - lo)


def roundtrip_bound(bits: int, rango: Tuple[float, float]) -> float:
    """Error máximo (hi − lo)/(2(2^q − 1)) para valores dentro del rango."""
    return (rango[1] - rango[0]) / (2 * ((1 << bits) - 1))


def feedback_bits(n_s: int, n_t: int, sigma, q_sa: int, q_sp: int) -> Fraction:
    """B = (2·n_s·n_t/(3σ))·(Q_SA + 2·Q_SP), con la longitud nominal."""
    return nominal_latent_length(n_s, n_t, sigma) * (q_sa + 2 * q_sp)


def actual_bits(m: int, q_sa: int, q_sp: int) -> int:
    return m * (q_sa + 2 * q_sp)


class BitReport(NamedTuple):
    nominal: Fraction
    actual: int


def bit_report(n_s: int, n_t: int, sigma, m: int, q_sa: int, q_sp: int) -> BitReport:
    return BitReport(nominal=feedback_bits(n_s, n_t, sigma, q_sa, q_sp), actual=actual_bits(m, q_sa, q_sp))


def bit_table(n_s: int, n_t: int, sigmas: Iterable[float], pairs: Iterable[Tuple[int, int]]) -> pd.DataFrame:
    """Tabla de bits de realimentación (nominal y entera) por σ y (Q_SA, Q_SP)."""
    filas = []
    for sigma in sigmas:
        m = latent_length(n_s, n_t, sigma)
        for q_sa, q_sp in pairs:
            rep = bit_report(n_s, n_t, sigma, m, q_sa, q_sp)
            filas.append({'sigma': sigma, 'q_sa': q_sa, 'q_sp': q_sp, 'latent_len': m,
                          'nominal_bits': format_fraction(rep.nominal), 'actual_bits': rep.actual})
    return pd.DataFrame(filas)


def format_fraction(x: Fraction) -> str:
    """Entero si es exacto, si no 'p/q (≈decimal)'."""
    if x.denominator == 1:
        return str(x.numerator)
    return f"{x.numerator}/{x.denominator} (≈{float(x):.4f})"


# ---------------------------------------------------------------------------
# Rangos y flujos del triple latente
# ---------------------------------------------------------------------------

def fit_ranges(latent: LatentTriple, margin: float = settings.QUANT_RANGE_MARGIN) -> Dict[str, Tuple[float, float]]:
    """Mínimo/máximo por flujo de latentes de entrenamiento con margen simétrico."""
    rangos = {}
    for nombre, z in zip(STREAM_NAMES, latent):
        lo, hi = float(np.min(z)), float(np.max(z))
        amplitud = hi - lo
        pad = margin * amplitud if amplitud > 0 else margin * max(abs(lo), 1.0)
        rangos[nombre] = (lo - pad, hi + pad)
    return rangos


def ranges_to_meta(rangos: Dict[str, Tuple[float, float]]) -> Dict[str, str]:
    return {f"quant_{n}": f"{lo!r},{hi!r}" for n, (lo, hi) in rangos.items()}


def ranges_from_meta(meta: Dict[str, str]) -> Optional[Dict[str, Tuple[float, float]]]:
    if not all(f"quant_{n}" in meta for n in STREAM_NAMES):
        return None
    return {n: tuple(float(x) for x in meta[f"quant_{n}"].split(',')) for n in STREAM_NAMES}


def quantize_latent(latent: LatentTriple, config: QuantConfig) -> Dict[str, np.ndarray]:
    if config.ranges is None:
        raise CsiDomainError("QuantConfig sin rangos ajustados")
    return {n: quantize(z, config.bits_for(n), config.ranges[n]) for n, z in zip(STREAM_NAMES, latent)}


def dequantize_latent(codes: Dict[str, np.ndarray], config: QuantConfig) -> LatentTriple:
    return LatentTriple(*(dequantize(codes[n], config.bits_for(n), config.ranges[n]).astype(np.float32)
                          for n in STREAM_NAMES))


def pack_stream(codes: np.ndarray, bits: int, rango: Tuple[float, float]) -> bytes:
    """u8 q | f64 lo | f64 hi | códigos a q bits, LSB primero, relleno a byte."""
    _validar(bits, rango)
    codes = np.asarray(codes, dtype=np.uint32).ravel()
    bit_matrix = ((codes[:, None] >> np.arange(bits, dtype=np.uint32)) & 1).astype(np.uint8)
    return STREAM_HEADER.pack(bits, rango[0], rango[1]) + np.packbits(bit_matrix.ravel(), bitorder='little').tobytes()


def unpack_stream(data: bytes, count: int) -> Tuple[np.ndarray, int, Tuple[float, float], int]:
    """
    Returns:
        Tuple (códigos, q, (lo, hi), bytes consumidos)
    """
    if len(data) < STREAM_HEADER.size:
        raise FeedbackFormatError(f"Cabecera de flujo truncada: {len(data)} de {STREAM_HEADER.size} bytes")
    bits, lo, hi = STREAM_HEADER.unpack_from(data, 0)
    if not settings.QUANT_MIN_BITS <= bits <= settings.QUANT_MAX_BITS:
        raise FeedbackFormatError(f"Bits por elemento inválidos en la cabecera: {bits}")
    n_bytes = -(-count * bits // 8)
    if len(data) < STREAM_HEADER.size + n_bytes:
        raise FeedbackFormatError(f"Flujo truncado: se esperaban {n_bytes} bytes de códigos para {count} elementos, "
                                  f"hay {len(data) - STREAM_HEADER.size}")
    payload = np.frombuffer(data, dtype=np.uint8, count=n_bytes, offset=STREAM_HEADER.size)
    planos = np.unpackbits(payload, bitorder='little')[:count * bits].reshape(count, bits).astype(np.uint32)
    codes = (planos << np.arange(bits, dtype=np.uint32)).sum(axis=1).astype(np.uint32)
    return codes, bits, (lo, hi), STREAM_HEADER.size + n_bytes


def pack_feedback(codes: Dict[str, np.ndarray], config: QuantConfig) -> bytes:
    """Carga útil de realimentación de una muestra: z_w, z_v, z_h en orden."""
    return b''.join(pack_stream(codes[n], config.bits_for(n), config.ranges[n]) for n in STREAM_NAMES)


def unpack_feedback(data: bytes, m: int) -> Dict[str, np.ndarray]:
    salida, pos = {}, 0
    for nombre in STREAM_NAMES:
        codes, _, _, usados = unpack_stream(data[pos:], m)
        salida[nombre] = codes
        pos += usados
    return salida


class QuantizedResult(NamedTuple):
    hat_v: np.ndarray
    hat_h: np.ndarray
    bits: BitReport


def quantized_inference(model, h_v: np.ndarray, h_h: np.ndarray, config: QuantConfig,
                        batch_size: int = 256) -> QuantizedResult:
    """
    encoder → cuantización por flujo → decuantización → decoder, sobre mapas
    normalizados [T, 2, N_s, W]. El entrenamiento nunca ve este camino.
    """
    cfg = model.config
    latente = encode_arrays(model, h_v, h_h, batch_size)
    recuperado = dequantize_latent(quantize_latent(latente, config), config)
    hat_v, hat_h = decode_arrays(model, recuperado, batch_size)
    bits = bit_report(cfg.n_s, cfg.n_t, cfg.sigma, cfg.latent_len, config.q_sa, config.q_sp)
    logger.info(f"📦 Cuantización (Q_SA={config.q_sa}, Q_SP={config.q_sp}): "
                f"{format_fraction(bits.nominal)} bits nominales, {bits.actual} reales")
    return QuantizedResult(hat_v, hat_h, bits)


def equal_budget_pairs(q_sa: int, q_sp: int) -> Sequence[Tuple[int, int]]:
    """Pares (q_sa + 2k, q_sp − k) con el mismo presupuesto de bits."""
    pares = []
    for k in range(-(q_sa - 1) // 2, q_sp):
        a, b = q_sa + 2 * k, q_sp - k
        if settings.QUANT_MIN_BITS <= a <= settings.QUANT_MAX_BITS and settings.QUANT_MIN_BITS <= b <= settings.QUANT_MAX_BITS:
            pares.append((a, b))
    return pares
