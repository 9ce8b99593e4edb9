"""
Métricas, transformaciones de ablación, línea base lineal, precodificación
ZF y tasa alcanzable.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import settings
from core.chanlab import CsiDataset
from core.errors import CsiDomainError, DimensionError
from utils.csv_output import ReportWriter

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# NMSE y CDF
# ---------------------------------------------------------------------------

def _norma2(x: np.ndarray) -> np.ndarray:
    """‖x‖² por muestra sobre todos los ejes excepto el primero."""
    x = np.asarray(x)
    return np.sum(np.abs(x.reshape(x.shape[0], -1)) ** 2, axis=1)


def nmse_per_sample(hat_v: np.ndarray, hat_h: np.ndarray, h_v: np.ndarray, h_h: np.ndarray) -> np.ndarray:
    """
    ½·(‖Ĥ_v−H_v‖²/‖H_v‖² + ‖Ĥ_h−H_h‖²/‖H_h‖²) por muestra, en lineal,
    sobre CSI compleja desnormalizada [T, N_s, W].
    """
    if hat_v.shape != h_v.shape or hat_h.shape != h_h.shape:
        raise DimensionError(f"NMSE sobre formas distintas: {hat_v.shape} vs {h_v.shape}")
    ref_v, ref_h = _norma2(h_v), _norma2(h_h)
    if np.any(ref_v == 0) or np.any(ref_h == 0):
        raise CsiDomainError("NMSE indefinido: hay muestras con canal nulo")
    return 0.5 * (_norma2(hat_v - h_v) / ref_v + _norma2(hat_h - h_h) / ref_h)


def to_db(linear, floor_db: float = settings.NMSE_FLOOR_DB):
    """10·log10 con piso (−∞ se reporta como floor_db)."""
    linear = np.asarray(linear, dtype=np.float64)
    with np.errstate(divide='ignore'):
        db = 10.0 * np.log10(linear)
    db = np.maximum(db, floor_db)
    return float(db) if db.ndim == 0 else db


def nmse_db(hat_v, hat_h, h_v, h_h) -> float:
    """NMSE agregado (media de los cocientes por muestra) en dB."""
    return to_db(np.mean(nmse_per_sample(hat_v, hat_h, h_v, h_h)))


def nmse_cdf(values_db: Sequence[float]) -> pd.DataFrame:
    """
    CDF empírica: una fila por valor distinto con la fracción de muestras ≤ valor.

    Returns:
        DataFrame con columnas value, fraction
    """
    valores = np.asarray(values_db, dtype=np.float64)
    if valores.size == 0:
        raise CsiDomainError("CDF de un conjunto vacío")
    unicos = np.unique(valores)
    fraccion = np.searchsorted(np.sort(valores), unicos, side='right') / valores.size
    return pd.DataFrame({'value': unicos, 'fraction': fraccion})


def cdf_quantile(cdf: pd.DataFrame, q: float) -> float:
    """Menor valor con fracción acumulada ≥ q."""
    if not 0.0 < q <= 1.0:
        raise CsiDomainError(f"Cuantil fuera de (0, 1]: {q}")
    idx = int(np.searchsorted(cdf['fraction'].to_numpy(), q - 1e-12, side='left'))
    return float(cdf['value'].iloc[min(idx, len(cdf) - 1)])


# ---------------------------------------------------------------------------
# Transformaciones de ablación
# ---------------------------------------------------------------------------

class DrMpCode(NamedTuple):
    shared: np.ndarray
    phase_v: np.ndarray
    phase_h: np.ndarray


class DrAsCode(NamedTuple):
    shared_v: np.ndarray
    shared_h: np.ndarray
    sign_v: np.ndarray
    sign_h: np.ndarray


def dr_mp_transform(h_v: np.ndarray, h_h: np.ndarray) -> DrMpCode:
    """Compartida = media de magnitudes; específicas = fases de cada polarización."""
    return DrMpCode(shared=0.5 * (np.abs(h_v) + np.abs(h_h)), phase_v=np.angle(h_v), phase_h=np.angle(h_h))


def dr_mp_inverse(code: DrMpCode) -> Tuple[np.ndarray, np.ndarray]:
    return code.shared * np.exp(1j * code.phase_v), code.shared * np.exp(1j * code.phase_h)


def _apilar(h: np.ndarray) -> np.ndarray:
    return np.stack([h.real, h.imag], axis=-3)


def _signo(x: np.ndarray) -> np.ndarray:
    """sign con la convención sign(0) = +1."""
    return np.where(x < 0, -1.0, 1.0)


def dr_as_transform(h_v: np.ndarray, h_h: np.ndarray) -> DrAsCode:
    """Valor absoluto de las partes real/imaginaria apiladas y patrones de signo."""
    x_v, x_h = _apilar(h_v), _apilar(h_h)
    return DrAsCode(shared_v=np.abs(x_v), shared_h=np.abs(x_h), sign_v=_signo(x_v), sign_h=_signo(x_h))


def dr_as_inverse(code: DrAsCode, shared_from: Optional[str] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Reconstruye ambas polarizaciones. Con shared_from='v' o 'h' se usa la
    parte compartida de una sola polarización para las dos (pasada de ablación).
    """
    if shared_from not in (None, 'v', 'h'):
        raise CsiDomainError(f"shared_from inválido: {shared_from}")
    abs_v = code.shared_v if shared_from != 'h' else code.shared_h
    abs_h = code.shared_h if shared_from != 'v' else code.shared_v
    x_v, x_h = abs_v * code.sign_v, abs_h * code.sign_h
    return x_v[..., 0, :, :] + 1j * x_v[..., 1, :, :], x_h[..., 0, :, :] + 1j * x_h[..., 1, :, :]


def ablation_report(dataset: CsiDataset) -> pd.DataFrame:
    """
    NMSE de reconstruir el dataset cuando la representación compartida se
    reduce a la de cada ablación (DR-MP: magnitud media; DR-AS: promedio de
    las pasadas con el valor absoluto de v y de h).
    """
    h_v, h_h = dataset.h_v.astype(np.complex128), dataset.h_h.astype(np.complex128)
    mp_v, mp_h = dr_mp_inverse(dr_mp_transform(h_v, h_h))
    code = dr_as_transform(h_v, h_h)
    pasadas = [nmse_per_sample(*dr_as_inverse(code, shared_from=pol), h_v, h_h) for pol in ('v', 'h')]
    as_v, as_h = dr_as_inverse(code)

    filas = [
        {'ablation': 'dr-mp', 'nmse_db': to_db(np.mean(nmse_per_sample(mp_v, mp_h, h_v, h_h)))},
        {'ablation': 'dr-as', 'nmse_db': to_db(np.mean(0.5 * (pasadas[0] + pasadas[1])))},
        {'ablation': 'dr-as-roundtrip', 'nmse_db': to_db(np.mean(nmse_per_sample(as_v, as_h, h_v, h_h)))},
    ]
    return pd.DataFrame(filas)


# ---------------------------------------------------------------------------
# Línea base lineal
# ---------------------------------------------------------------------------

def _vectores(h: np.ndarray) -> np.ndarray:
    """[T, N_s, W] complejo → [T, 2·N_s·W] real (parte real, luego imaginaria)."""
    t = h.shape[0]
    return np.concatenate([h.real.reshape(t, -1), h.imag.reshape(t, -1)], axis=1).astype(np.float64)


def _base_truncada(x: np.ndarray, rank: int) -> Tuple[np.ndarray, np.ndarray]:
    media = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - media, full_matrices=False)
    return media, vt[:min(rank, vt.shape[0])]


@dataclass
class LinearBaseline:
    """
    Códec lineal truncado por polarización: una base ortonormal por
    polarización (SVD de sus vectores reales centrados de entrenamiento)
    y proyección sobre los `rank` primeros vectores de cada una.

    Las bases son anidadas en el rango, así que el error de cada
    polarización (y el NMSE por muestra) no crece al aumentar `rank`.
    """
    mean_v: np.ndarray
    basis_v: np.ndarray        # [rank, 2·N_s·N_t/2]
    mean_h: np.ndarray
    basis_h: np.ndarray
    n_s: int
    n_t: int

    @property
    def rank(self) -> int:
        """Coeficientes retenidos por polarización."""
        return self.basis_v.shape[0]

    @property
    def retained(self) -> int:
        return self.basis_v.shape[0] + self.basis_h.shape[0]

    @classmethod
    def fit(cls, train: CsiDataset, sigma: Optional[float] = None, rank: Optional[int] = None) -> "LinearBaseline":
        """`rank` por polarización; con σ se retienen n_s·n_t/σ por polarización (2n_sn_t/σ en total)."""
        if rank is None:
            if sigma is None or sigma <= 1:
                raise CsiDomainError(f"Se requiere σ > 1 o un rango explícito (σ={sigma})")
            rank = int(round(train.n_s * train.n_t / sigma))
        if rank < 1:
            raise CsiDomainError(f"Rango inválido: {rank}")
        mean_v, basis_v = _base_truncada(_vectores(train.h_v), rank)
        mean_h, basis_h = _base_truncada(_vectores(train.h_h), rank)
        logger.info(f"📐 Línea base lineal: rango {basis_v.shape[0]} por polarización de {basis_v.shape[1]}")
        return cls(mean_v=mean_v, basis_v=basis_v, mean_h=mean_h, basis_h=basis_h, n_s=train.n_s, n_t=train.n_t)

    def encode(self, h_v: np.ndarray, h_h: np.ndarray) -> np.ndarray:
        c_v = (_vectores(h_v) - self.mean_v) @ self.basis_v.T
        c_h = (_vectores(h_h) - self.mean_h) @ self.basis_h.T
        return np.concatenate([c_v, c_h], axis=1)

    def _expandir(self, coeffs: np.ndarray, mean: np.ndarray, basis: np.ndarray) -> np.ndarray:
        x = coeffs @ basis + mean
        bloque = self.n_s * (self.n_t // 2)
        forma = (x.shape[0], self.n_s, self.n_t // 2)
        return x[:, :bloque].reshape(forma) + 1j * x[:, bloque:].reshape(forma)

    def decode(self, coeffs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        k = self.basis_v.shape[0]
        return (self._expandir(coeffs[:, :k], self.mean_v, self.basis_v),
                self._expandir(coeffs[:, k:], self.mean_h, self.basis_h))

    def reconstruct(self, dataset: CsiDataset) -> Tuple[np.ndarray, np.ndarray]:
        return self.decode(self.encode(dataset.h_v, dataset.h_h))

    def nmse_db(self, dataset: CsiDataset) -> float:
        hat_v, hat_h = self.reconstruct(dataset)
        return nmse_db(hat_v, hat_h, dataset.h_v, dataset.h_h)


# ---------------------------------------------------------------------------
# Precodificación ZF y tasa alcanzable
# ---------------------------------------------------------------------------

class ZfResult(NamedTuple):
    v: np.ndarray           # [..., n, K], columnas de norma unitaria
    regularized: bool


def zf_precode(users: np.ndarray, ridge: float = settings.ZF_RIDGE) -> ZfResult:
    """
    V = Ĥ^H(ĤĤ^H)^{-1} con Ĥ = [h_1^H; ...; h_K^H]; admite lotes [..., K, n].

    Si ĤĤ^H es singular se usa (ĤĤ^H + ridge·I)^{-1} y se marca el resultado.
    """
    users = np.asarray(users, dtype=np.complex128)
    if users.ndim < 2:
        raise DimensionError(f"zf_precode espera [..., K, n], recibido {users.shape}")
    k, n = users.shape[-2:]
    if k > n:
        raise DimensionError(f"ZF requiere K ≤ n (K={k}, n={n})")
    h = np.conj(users)
    h_herm = np.conj(np.swapaxes(h, -1, -2))
    gram = h @ h_herm
    rangos = np.linalg.matrix_rank(gram, hermitian=True)
    regularized = bool(np.any(rangos < k))
    if regularized:
        gram = gram + ridge * np.eye(k)
        logger.warning(f"⚠️ Gram singular en ZF; inversa regularizada (ridge={ridge})")
    v = h_herm @ np.linalg.inv(gram)
    normas = np.linalg.norm(v, axis=-2, keepdims=True)
    v = np.divide(v, normas, out=np.zeros_like(v), where=normas > 0)
    return ZfResult(v=v, regularized=regularized)


def interference_ratio(users: np.ndarray, v: np.ndarray) -> float:
    """‖offdiag(ĤV)‖ / ‖diag(ĤV)‖."""
    g = np.conj(np.asarray(users)) @ v
    diag = np.diagonal(g, axis1=-2, axis2=-1)
    off = g - np.einsum('...i,ij->...ij', diag, np.eye(g.shape[-1]))
    return float(np.linalg.norm(off) / np.linalg.norm(diag))


def achievable_rate(users: np.ndarray, v: np.ndarray, snr_grid_db: Sequence[float]) -> np.ndarray:
    """
    R_k = log2(1 + (P/K)|h_k^H v_k|² / ((P/K) Σ_{j≠k} |h_k^H v_j|² + 1)) con ruido unitario.

    Args:
        users: canales verdaderos [..., K, n]
        v: precodificador [..., n, K]
        snr_grid_db: P en dB

    Returns:
        Arreglo [len(snr), ..., K] en bits/s/Hz
    """
    g = np.abs(np.conj(np.asarray(users)) @ v) ** 2
    k = g.shape[-1]
    senal = np.diagonal(g, axis1=-2, axis2=-1)
    interferencia = g.sum(axis=-1) - senal
    tasas = []
    for snr_db in snr_grid_db:
        p = 10.0 ** (snr_db / 10.0) / k
        tasas.append(np.log2(1.0 + p * senal / (p * interferencia + 1.0)))
    return np.stack(tasas)


def user_vectors(h_v: np.ndarray, h_h: np.ndarray) -> np.ndarray:
    """Vector de usuario por subbanda: cat(h_v[k], h_h[k]) → [..., N_s, n_t]."""
    return np.concatenate([h_v, h_h], axis=-1)


def rate_table(true: CsiDataset, hat_v: np.ndarray, hat_h: np.ndarray, users: int = settings.RATE_USERS,
               trials: int = settings.RATE_TRIALS, snr_grid_db: Sequence[float] = settings.SNR_GRID_DB,
               seed: int = 0) -> pd.DataFrame:
    """
    Tasa ZF media por usuario con CSI perfecta y recuperada, promediada sobre
    ensayos y subbandas. Cada ensayo toma `users` muestras distintas.
    """
    if len(true) < users:
        raise CsiDomainError(f"Se necesitan al menos {users} muestras, hay {len(true)}")
    rng = np.random.default_rng(seed)
    verdaderos = user_vectors(true.h_v, true.h_h).astype(np.complex128)
    recuperados = user_vectors(hat_v, hat_h).astype(np.complex128)

    perfecta = np.zeros(len(snr_grid_db))
    recuperada = np.zeros(len(snr_grid_db))
    reg_perfecta = reg_recuperada = 0
    for _ in range(trials):
        idx = rng.choice(len(true), size=users, replace=False)
        h = np.swapaxes(verdaderos[idx], 0, 1)          # [N_s, K, n]
        h_hat = np.swapaxes(recuperados[idx], 0, 1)
        zf_p, zf_r = zf_precode(h), zf_precode(h_hat)
        reg_perfecta += int(zf_p.regularized)
        reg_recuperada += int(zf_r.regularized)
        perfecta += achievable_rate(h, zf_p.v, snr_grid_db).mean(axis=(1, 2))
        recuperada += achievable_rate(h, zf_r.v, snr_grid_db).mean(axis=(1, 2))

    tabla = pd.DataFrame({
        'snr_db': list(snr_grid_db),
        'rate_perfect': perfecta / trials,
        'rate_recovered': recuperada / trials,
        # el precodificador no depende del SNR: mismo conteo en cada fila
        'zf_regularized_perfect': reg_perfecta,
        'zf_regularized_recovered': reg_recuperada,
    })
    tabla.attrs['regularized_trials'] = max(reg_perfecta, reg_recuperada)
    return tabla


# ---------------------------------------------------------------------------
# Reporte
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    nmse_per_sample_db: np.ndarray
    nmse_db: float
    cdf: pd.DataFrame
    gcs: Optional[Dict[str, Dict[str, float]]] = None
    bits: Optional[pd.DataFrame] = None
    params: Optional[Dict[str, int]] = None
    rate: Optional[pd.DataFrame] = None
    summary: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_nmse(cls, per_sample_linear: np.ndarray, **kwargs) -> "EvalReport":
        per_db = to_db(per_sample_linear)
        per_db = np.atleast_1d(per_db)
        return cls(nmse_per_sample_db=per_db, nmse_db=to_db(np.mean(per_sample_linear)),
                   cdf=nmse_cdf(per_db), **kwargs)


def emit_report(report: EvalReport, out_dir: str) -> Dict[str, str]:
    """Escribe las tablas del reporte y un resumen clave=valor en out_dir."""
    writer = ReportWriter(out_dir)
    rutas = {
        'nmse': writer.write_table(pd.DataFrame({'sample': np.arange(len(report.nmse_per_sample_db)),
                                                 'nmse_db': report.nmse_per_sample_db}), 'nmse_per_sample'),
        'cdf': writer.write_table(report.cdf, 'nmse_cdf'),
    }
    if report.gcs is not None:
        rutas['gcs'] = writer.write_table(gcs_table(report.gcs), 'gcs_summary')
    if report.bits is not None:
        rutas['bits'] = writer.write_table(report.bits, 'bits')
    if report.params is not None:
        rutas['params'] = writer.write_table(
            pd.DataFrame({'module': list(report.params), 'count': list(report.params.values())}), 'params')
    if report.rate is not None:
        rutas['rate'] = writer.write_table(report.rate, 'rate')

    resumen = {'nmse_db': report.nmse_db, 'samples': len(report.nmse_per_sample_db),
               'nmse_median_db': cdf_quantile(report.cdf, 0.5)}
    resumen.update(report.summary)
    rutas['summary'] = writer.write_summary(resumen, 'summary')
    return rutas


def gcs_table(summary: Dict[str, Dict[str, float]]) -> pd.DataFrame:
    return pd.DataFrame([{'variant': nombre, 'mean': v['mean'], 'std': v['std']} for nombre, v in summary.items()])
