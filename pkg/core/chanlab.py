"""
Laboratorio de canal dual-polarizado (vectorizado con NumPy).

Genera, normaliza y caracteriza conjuntos de CSI dual-polarizada con
correlación de polarización controlable mediante el acoplamiento de fase κ.
"""

import concurrent.futures
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from config import settings
from core.errors import ConfigurationError, CsiDomainError, DimensionError
from strict_models import ScenarioConfig

logger = logging.getLogger(__name__)

GCS_VARIANTS = ('original', 'real', 'imag', 'magnitude', 'phase')


@dataclass(frozen=True)
class CsiPair:
    """CFR vertical y horizontal de una muestra, [N_s x N_t/2] cada una."""
    h_v: np.ndarray
    h_h: np.ndarray

    def __post_init__(self):
        if self.h_v.shape != self.h_h.shape or self.h_v.ndim != 2:
            raise DimensionError(f"Polarizaciones con formas distintas: {self.h_v.shape} vs {self.h_h.shape}")


@dataclass(frozen=True)
class NormScaler:
    """Mapa afín global sobre partes real e imaginaria."""
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise CsiDomainError(f"Normalizador degenerado: lo={self.lo}, hi={self.hi}")

    @property
    def span(self) -> float:
        return self.hi - self.lo


@dataclass
class CsiDataset:
    """
    Colección ordenada de pares CSI.

    h_v, h_h se guardan apilados como [T, N_s, N_t/2] complejos; cada índice
    es un CsiPair.
    """
    n_s: int
    n_t: int
    h_v: np.ndarray
    h_h: np.ndarray
    scenario: Optional[ScenarioConfig] = None
    scaler: Optional[NormScaler] = None
    seed: Optional[int] = None
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        _validar_dimensiones(self.n_s, self.n_t)
        esperado = (self.n_s, self.n_t // 2)
        if self.h_v.ndim != 3 or self.h_v.shape != self.h_h.shape or self.h_v.shape[1:] != esperado:
            raise DimensionError(
                f"Muestras con forma {self.h_v.shape}/{self.h_h.shape}, se esperaba [T, {esperado[0]}, {esperado[1]}]"
            )

    def __len__(self) -> int:
        return self.h_v.shape[0]

    def __getitem__(self, idx: int) -> CsiPair:
        return CsiPair(self.h_v[idx], self.h_h[idx])

    def __iter__(self) -> Iterator[CsiPair]:
        for i in range(len(self)):
            yield self[i]

    @property
    def normalized(self) -> bool:
        return self.scaler is not None

    def subset(self, indices: Sequence[int]) -> "CsiDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, h_v=self.h_v[idx], h_h=self.h_h[idx])


def _validar_dimensiones(n_s: int, n_t: int):
    if n_s < 1 or n_t < 2 or n_t % 2:
        raise DimensionError(f"Dimensiones inválidas: n_s={n_s}, n_t={n_t} (n_t debe ser par)")


# ---------------------------------------------------------------------------
# Generador geométrico multitrayecto
# ---------------------------------------------------------------------------

def _generar_muestra(scenario: ScenarioConfig, n_s: int, width: int,
                     seed: int, index: int) -> Tuple[np.ndarray, np.ndarray]:
    """Una muestra desde su propio sub-flujo (seed, index)."""
    rng = np.random.default_rng([int(seed), int(index)])
    p = scenario.n_paths

    tau = np.sort(rng.exponential(scenario.delay_spread, size=p))
    tau -= tau[0]
    power = np.exp(-tau / scenario.delay_spread)
    power /= power.sum()
    alpha = np.sqrt(power) * (rng.standard_normal(p) + 1j * rng.standard_normal(p)) / np.sqrt(2.0)

    theta0 = rng.uniform(-np.pi / 3, np.pi / 3)
    theta = theta0 + scenario.angle_spread * rng.standard_normal(p)

    kappa = scenario.phase_coupling
    phi_v = rng.uniform(0.0, 2 * np.pi, size=p)
    u = rng.uniform(0.0, 2 * np.pi, size=p)
    phi_h = np.mod(kappa * phi_v + (1.0 - kappa) * u, 2 * np.pi)

    k = np.arange(n_s)[:, None]
    n = np.arange(width)[None, :]
    freq = np.exp(-2j * np.pi * k * tau[None, :] / n_s)            # [N_s, P]
    space = np.exp(-1j * np.pi * n.T * np.sin(theta)[None, :]).T     # [P, W]

    h_v = (freq * (alpha * np.exp(1j * phi_v))[None, :]) @ space
    h_h = (freq * (alpha * np.exp(1j * phi_h))[None, :]) @ space
    return h_v.astype(np.complex64), h_h.astype(np.complex64)


def generate_dataset(scenario: ScenarioConfig, count: int, n_s: int, n_t: int,
                     seed: int, workers: int = 1) -> CsiDataset:
    """
    Genera `count` muestras del escenario (sin normalizar).

    Cada muestra usa el sub-flujo (seed, índice), así que el resultado no
    depende del número de workers.
    """
    _validar_dimensiones(n_s, n_t)
    if count < 1:
        raise DimensionError(f"count debe ser >= 1, recibido {count}")
    if not scenario.generable:
        raise ConfigurationError(f"El escenario '{scenario.name}' tiene parámetros desconocidos; no se puede generar")
    width = n_t // 2

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            muestras = list(pool.map(lambda i: _generar_muestra(scenario, n_s, width, seed, i), range(count)))
    else:
        muestras = [_generar_muestra(scenario, n_s, width, seed, i) for i in range(count)]

    h_v = np.stack([m[0] for m in muestras])
    h_h = np.stack([m[1] for m in muestras])
    logger.info(f"📡 Generadas {count} muestras '{scenario.name}' (κ={scenario.phase_coupling:.3f}, "
                f"{n_s}x{n_t}, seed={seed})")
    return CsiDataset(n_s=n_s, n_t=n_t, h_v=h_v, h_h=h_h, scenario=scenario, seed=seed,
                      meta={'generator_version': settings.GENERATOR_VERSION})


# ---------------------------------------------------------------------------
# Similitud coseno generalizada
# ---------------------------------------------------------------------------

def _gcs_filas(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """GCS por subbanda; admite lotes [..., N_s, W]."""
    if a.shape != b.shape:
        raise DimensionError(f"GCS sobre formas distintas: {a.shape} vs {b.shape}")
    a = a.astype(np.complex128) if np.iscomplexobj(a) else a.astype(np.float64)
    b = b.astype(np.complex128) if np.iscomplexobj(b) else b.astype(np.float64)
    norm_a = np.linalg.norm(a, axis=-1)
    norm_b = np.linalg.norm(b, axis=-1)
    for nombre, norma in (('a', norm_a), ('b', norm_b)):
        nulas = np.argwhere(norma == 0)
        if nulas.size:
            raise CsiDomainError(f"Fila nula en la entrada '{nombre}' (subbanda {int(nulas[0][-1])})")
    inner = np.abs(np.sum(np.conj(a) * b, axis=-1))
    return np.clip(inner / (norm_a * norm_b), 0.0, 1.0)


def gcs(a: np.ndarray, b: np.ndarray) -> float:
    """ρ = (1/N_s) Σ_k |a_k^H b_k| / (‖a_k‖‖b_k‖), filas como vectores por subbanda."""
    if a.ndim != 2:
        raise DimensionError(f"gcs espera matrices [N_s x W], recibido {a.shape}")
    return float(np.mean(_gcs_filas(a, b)))


def _fase(h: np.ndarray) -> np.ndarray:
    """Fase envuelta a (-π, π]."""
    ang = np.angle(h)
    return np.where(ang <= -np.pi, ang + 2 * np.pi, ang)


def _variantes(h_v: np.ndarray, h_h: np.ndarray) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    return {
        'original': (h_v, h_h),
        'real': (h_v.real, h_h.real),
        'imag': (h_v.imag, h_h.imag),
        'magnitude': (np.abs(h_v), np.abs(h_h)),
        'phase': (_fase(h_v), _fase(h_h)),
    }


def gcs_profile(pair: CsiPair) -> Dict[str, float]:
    """Perfil de cinco GCS: original, real, imaginaria, magnitud y fase."""
    return {nombre: gcs(a, b) for nombre, (a, b) in _variantes(pair.h_v, pair.h_h).items()}


def gcs_matrix(dataset: CsiDataset) -> Dict[str, np.ndarray]:
    """GCS por muestra para las cinco variantes (vectorizado sobre el lote)."""
    return {nombre: _gcs_filas(a, b).mean(axis=-1)
            for nombre, (a, b) in _variantes(dataset.h_v, dataset.h_h).items()}


def gcs_summary(dataset: CsiDataset) -> Dict[str, Dict[str, float]]:
    """Media y desviación estándar de cada variante (presentación 'media ± std')."""
    valores = gcs_matrix(dataset)
    return {nombre: {'mean': float(np.mean(v)), 'std': float(np.std(v))} for nombre, v in valores.items()}


def calibrate_kappa(scenario: ScenarioConfig, n_s: int, n_t: int,
                    count: int = settings.CALIBRATION_SAMPLES, seed: int = 0,
                    tol: float = settings.CALIBRATION_TOLERANCE,
                    max_iter: int = settings.CALIBRATION_MAX_ITER) -> ScenarioConfig:
    """
    Bisección 1-D sobre κ hasta que la GCS de magnitud media alcance target_gcs.

    Todas las evaluaciones usan la misma semilla (números aleatorios comunes),
    así la curva GCS(κ) es determinista y monótona en la práctica.
    """
    if scenario.target_gcs is None:
        raise CsiDomainError(f"El escenario '{scenario.name}' no tiene target_gcs para calibrar")
    objetivo = scenario.target_gcs

    def gcs_media(kappa: float) -> float:
        ds = generate_dataset(scenario.model_copy(update={'phase_coupling': kappa}), count, n_s, n_t, seed)
        return float(np.mean(gcs_matrix(ds)['magnitude']))

    lo, hi = 0.0, 1.0
    g_lo, g_hi = gcs_media(lo), gcs_media(hi)
    if objetivo <= g_lo:
        logger.warning(f"⚠️ target_gcs={objetivo:.3f} bajo el mínimo alcanzable {g_lo:.3f}; usando κ=0")
        return scenario.model_copy(update={'phase_coupling': 0.0})
    if objetivo >= g_hi:
        logger.warning(f"⚠️ target_gcs={objetivo:.3f} sobre el máximo alcanzable {g_hi:.3f}; usando κ=1")
        return scenario.model_copy(update={'phase_coupling': 1.0})

    kappa, valor = 0.5, None
    for it in range(max_iter):
        kappa = 0.5 * (lo + hi)
        valor = gcs_media(kappa)
        logger.debug(f"   iter {it}: κ={kappa:.4f} → GCS={valor:.4f}")
        if abs(valor - objetivo) <= tol:
            break
        if valor < objetivo:
            lo = kappa
        else:
            hi = kappa

    logger.info(f"🎯 Calibración '{scenario.name}': κ={kappa:.4f}, GCS magnitud={valor:.4f} (objetivo {objetivo:.3f})")
    return scenario.model_copy(update={'phase_coupling': kappa})


# ---------------------------------------------------------------------------
# Normalización
# ---------------------------------------------------------------------------

def fit_normalizer(dataset: CsiDataset) -> NormScaler:
    """Mínimo y máximo globales de partes real e imaginaria (solo split de entrenamiento)."""
    if dataset.normalized:
        raise CsiDomainError("El dataset ya está normalizado")
    partes = [dataset.h_v.real, dataset.h_v.imag, dataset.h_h.real, dataset.h_h.imag]
    lo = float(min(np.min(p) for p in partes))
    hi = float(max(np.max(p) for p in partes))
    if not lo < hi:
        raise CsiDomainError(f"Dataset degenerado para normalizar: lo = hi = {lo}")
    return NormScaler(lo=lo, hi=hi)


def _escalar(x: np.ndarray, scaler: NormScaler) -> Tuple[np.ndarray, int]:
    y = (x.astype(np.float64) - scaler.lo) / scaler.span
    fuera = int(np.count_nonzero((y < 0.0) | (y > 1.0)))
    return np.clip(y, 0.0, 1.0), fuera


def apply_normalizer(dataset: CsiDataset, scaler: NormScaler) -> Tuple[CsiDataset, int]:
    """
    Escala a [0, 1]; los valores fuera de [lo, hi] se recortan y se cuentan.

    Returns:
        Tuple (dataset normalizado en complex128, cantidad de entradas recortadas)
    """
    if dataset.normalized:
        raise CsiDomainError("El dataset ya está normalizado")
    total = 0
    salida = {}
    for nombre in ('h_v', 'h_h'):
        h = getattr(dataset, nombre)
        re, c_re = _escalar(h.real, scaler)
        im, c_im = _escalar(h.imag, scaler)
        salida[nombre] = re + 1j * im
        total += c_re + c_im
    if total:
        logger.info(f"✂️ {total} entradas recortadas a [0, 1] al normalizar")
    return replace(dataset, h_v=salida['h_v'], h_h=salida['h_h'], scaler=scaler), total


def invert_normalizer(dataset: CsiDataset, scaler: Optional[NormScaler] = None) -> CsiDataset:
    scaler = scaler or dataset.scaler
    if scaler is None:
        raise CsiDomainError("No hay normalizador para invertir")
    h_v = denormalize_array(dataset.h_v, scaler)
    h_h = denormalize_array(dataset.h_h, scaler)
    return replace(dataset, h_v=h_v, h_h=h_h, scaler=None)


def denormalize_array(h: np.ndarray, scaler: NormScaler) -> np.ndarray:
    re = h.real.astype(np.float64) * scaler.span + scaler.lo
    im = h.imag.astype(np.float64) * scaler.span + scaler.lo
    return re + 1j * im


def to_network_arrays(dataset: CsiDataset) -> Tuple[np.ndarray, np.ndarray]:
    """Pares complejos normalizados → mapas reales [T, 2, N_s, N_t/2] (real, imag)."""
    if not dataset.normalized:
        raise CsiDomainError("La red consume datos normalizados; aplique el normalizador primero")
    h_v = np.stack([dataset.h_v.real, dataset.h_v.imag], axis=1)
    h_h = np.stack([dataset.h_h.real, dataset.h_h.imag], axis=1)
    return h_v, h_h


def from_network_arrays(h_v: np.ndarray, h_h: np.ndarray, scaler: NormScaler) -> Tuple[np.ndarray, np.ndarray]:
    """Mapas reales normalizados [T, 2, N_s, W] → CSI compleja desnormalizada."""
    v = denormalize_array(h_v[:, 0] + 1j * h_v[:, 1], scaler)
    h = denormalize_array(h_h[:, 0] + 1j * h_h[:, 1], scaler)
    return v, h


# ---------------------------------------------------------------------------
# Splits, mezclas e importación
# ---------------------------------------------------------------------------

def split_dataset(dataset: CsiDataset, fractions: Sequence[float], seed: int) -> List[CsiDataset]:
    """Partición aleatoria reproducible (por ejemplo [0.8, 0.1, 0.1])."""
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise CsiDomainError(f"Fracciones inválidas: {list(fractions)}")
    orden = np.random.default_rng(seed).permutation(len(dataset))
    cortes = np.floor(np.cumsum(fractions)[:-1] * len(dataset)).astype(int)
    return [dataset.subset(np.sort(parte)) for parte in np.split(orden, cortes)]


def _escenario_mezclado(nombre: str, escenarios: Sequence[Optional[ScenarioConfig]]) -> ScenarioConfig:
    """Conserva un parámetro solo si todas las fuentes lo comparten; si no, queda desconocido."""
    campos = {}
    for campo in ('n_paths', 'phase_coupling', 'delay_spread', 'angle_spread', 'target_gcs'):
        valores = {getattr(sc, campo) if sc is not None else None for sc in escenarios}
        campos[campo] = valores.pop() if len(valores) == 1 else None
    return ScenarioConfig(name=nombre, **campos)


def mix_datasets(datasets: Sequence[CsiDataset], count: int, seed: int) -> CsiDataset:
    """
    Mezcla varios escenarios y extrae `count` muestras al azar
    (entrenamiento multi-escenario para el estudio de generalización).
    """
    if not datasets:
        raise CsiDomainError("No hay datasets para mezclar")
    base = datasets[0]
    for ds in datasets[1:]:
        if (ds.n_s, ds.n_t) != (base.n_s, base.n_t):
            raise DimensionError(f"Grillas incompatibles: {(ds.n_s, ds.n_t)} vs {(base.n_s, base.n_t)}")
        if ds.normalized:
            raise CsiDomainError("Solo se mezclan datasets sin normalizar")
    h_v = np.concatenate([ds.h_v for ds in datasets])
    h_h = np.concatenate([ds.h_h for ds in datasets])
    if count > len(h_v):
        raise CsiDomainError(f"Se pidieron {count} muestras pero el pool tiene {len(h_v)}")
    idx = np.sort(np.random.default_rng(seed).choice(len(h_v), size=count, replace=False))
    nombre = '+'.join(ds.scenario.name if ds.scenario else 'unknown' for ds in datasets)
    escenario = _escenario_mezclado(nombre, [ds.scenario for ds in datasets])
    logger.info(f"🔀 Mezcla {nombre}: {count} de {len(h_v)} muestras")
    return CsiDataset(n_s=base.n_s, n_t=base.n_t, h_v=h_v[idx], h_h=h_h[idx], scenario=escenario,
                      seed=seed, meta={'mixed_from': nombre})


def import_dataset(path: str, name: str = 'imported') -> CsiDataset:
    """
    Importa CSI externa (.npz con arreglos complejos h_v, h_h de forma [T, N_s, N_t/2]).
    """
    with np.load(path) as datos:
        faltantes = {'h_v', 'h_h'} - set(datos.files)
        if faltantes:
            raise DimensionError(f"El archivo {path} no contiene {sorted(faltantes)}")
        h_v = np.asarray(datos['h_v']).astype(np.complex64)
        h_h = np.asarray(datos['h_h']).astype(np.complex64)
    if h_v.ndim != 3 or h_v.shape != h_h.shape:
        raise DimensionError(f"Formas importadas inválidas: {h_v.shape} / {h_h.shape}")
    if not (np.all(np.isfinite(h_v)) and np.all(np.isfinite(h_h))):
        raise CsiDomainError(f"El archivo {path} contiene entradas no finitas")
    escenario = ScenarioConfig(name=name, angle_spread=None)
    logger.info(f"📥 Importadas {h_v.shape[0]} muestras desde {path}")
    return CsiDataset(n_s=h_v.shape[1], n_t=2 * h_v.shape[2], h_v=h_v, h_h=h_h, scenario=escenario,
                      meta={'imported_from': path})
