"""
Entrenamiento alternado de dos pasos de DiReNet con regularización CLUB.

Paso 1: encoder/decoder ← Adam sobre L_MSE + λ·L_MI (estimadores congelados).
Paso 2: f1, f2 ← Adam sobre sus log-verosimilitudes negativas (modelo congelado).
"""

import itertools
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from config import settings
from core import chanlab
from core.chanlab import CsiDataset, NormScaler
from core.checkpoint import write_checkpoint
from core.direnet import (DiReNet, ParameterStore, build_model, count_params_actual, encode_arrays,
                          parameter_group, reconstruct_arrays)
from core.errors import BatchTooSmallError, ConfigurationError, NonFiniteError, TrainingDivergedError
from core.evalkit import nmse_per_sample, to_db
from core.miest import (MiEstimator, build_estimators, club_nll_loss, estimator_tensors, joint_inputs,
                        mi_distance, mi_terms)
from core.quant import fit_ranges, ranges_to_meta
from core.seeds import SeedStreams
from strict_models import ModelConfig, ScenarioConfig, TrainConfig
from utils.decorators import log_config_on_error

logger = logging.getLogger(__name__)

LN2 = float(np.log(2.0))
HISTORY_COLUMNS = ['epoch', 'train_mse', 'train_mi', 'train_loss', 'val_nmse_db',
                   'mi_joint', 'mi_pol', 'mi_gap']


# ---------------------------------------------------------------------------
# Pérdidas
# ---------------------------------------------------------------------------

def mse_loss(hat_v: torch.Tensor, hat_h: torch.Tensor, h_v: torch.Tensor, h_h: torch.Tensor) -> torch.Tensor:
    """(1/2T) Σ_t (‖Ĥ_v − H_v‖² + ‖Ĥ_h − H_h‖²) sobre mapas normalizados."""
    err_v = ((hat_v - h_v) ** 2).flatten(1).sum(dim=1)
    err_h = ((hat_h - h_h) ** 2).flatten(1).sum(dim=1)
    return 0.5 * (err_v + err_h).mean()


def combine_losses(mse, mi, lam: float):
    """L = L_MSE + λ·L_MI"""
    return mse + lam * mi


class LossTerms(NamedTuple):
    loss: torch.Tensor
    mse: torch.Tensor
    mi: torch.Tensor
    i_joint: torch.Tensor
    i_pol: torch.Tensor


def total_loss(model: DiReNet, f1: MiEstimator, f2: MiEstimator, h_v: torch.Tensor, h_h: torch.Tensor,
               lam: float, delta: float = 0.0) -> LossTerms:
    """
    Pérdida total sobre un lote. Con λ = 0 los términos MI se calculan sin
    gradiente y solo se reportan.
    """
    hat_v, hat_h, enc = model(h_v, h_h)
    mse = mse_loss(hat_v, hat_h, h_v, h_h)
    if lam > 0:
        i_joint, i_pol = mi_terms(h_v, h_h, enc.w, f1, f2)
        mi = mi_distance(i_joint, i_pol, delta)
        return LossTerms(combine_losses(mse, mi, lam), mse, mi, i_joint, i_pol)
    with torch.no_grad():
        i_joint, i_pol = mi_terms(h_v, h_h, enc.w.detach(), f1, f2)
        mi = mi_distance(i_joint, i_pol, delta)
    return LossTerms(mse, mse, mi, i_joint, i_pol)


# ---------------------------------------------------------------------------
# Historial
# ---------------------------------------------------------------------------

@dataclass
class TrainHistory:
    """Un registro por época completada; la línea base se guarda aparte."""
    records: List[Dict[str, float]] = field(default_factory=list)
    wall_time: List[float] = field(default_factory=list)
    baseline: Optional[Dict[str, float]] = None

    def append(self, record: Dict[str, float], seconds: float):
        self.records.append(record)
        self.wall_time.append(seconds)

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=HISTORY_COLUMNS)

    def best(self) -> Optional[Dict[str, float]]:
        if not self.records:
            return None
        return min(self.records, key=lambda r: r['val_nmse_db'])

    def write(self, out_dir: str) -> Dict[str, str]:
        """history.csv (reproducible bit a bit) y tiempos de pared en un archivo aparte."""
        os.makedirs(out_dir, exist_ok=True)
        rutas = {'history': os.path.join(out_dir, 'history.csv'),
                 'timing': os.path.join(out_dir, 'history_timing.csv')}
        self.to_frame().to_csv(rutas['history'], index=False)
        pd.DataFrame({'epoch': [r['epoch'] for r in self.records], 'wall_time_s': self.wall_time}) \
            .to_csv(rutas['timing'], index=False)
        if self.baseline is not None:
            rutas['baseline'] = os.path.join(out_dir, 'history_baseline.csv')
            pd.DataFrame([self.baseline]).to_csv(rutas['baseline'], index=False)
        return rutas


# ---------------------------------------------------------------------------
# Entrenador
# ---------------------------------------------------------------------------

def dataset_tensors(dataset: CsiDataset, device, dtype=torch.float32) -> Tuple[torch.Tensor, torch.Tensor]:
    h_v, h_h = chanlab.to_network_arrays(dataset)
    return (torch.as_tensor(h_v, dtype=dtype, device=device),
            torch.as_tensor(h_h, dtype=dtype, device=device))


class Trainer:
    """
    Estado mutable del entrenamiento: modelo, estimadores, optimizadores y
    generador de lotes. Un único hilo muta los parámetros.
    """

    def __init__(self, config: ModelConfig, train_config: TrainConfig, estimator_seed: Optional[int] = None):
        self.config = config
        self.train_config = train_config
        self.seed = train_config.seed
        self.step = 0
        self.device = torch.device(train_config.device)
        torch.use_deterministic_algorithms(True, warn_only=True)

        self.streams = SeedStreams(train_config.seed)
        self.model = build_model(config, self.streams.seed_for('init')).to(self.device)

        mi_gen = torch.Generator()
        mi_gen.manual_seed(self.streams.seed_for('mi_init') if estimator_seed is None else int(estimator_seed))
        f1, f2 = build_estimators(config.n_s, config.n_t, train_config.mi_hidden, mi_gen)
        self.f1, self.f2 = f1.to(self.device), f2.to(self.device)

        adam = dict(lr=train_config.lr, betas=tuple(train_config.betas), eps=train_config.adam_eps)
        self.opt_main = torch.optim.Adam(self.model.parameters(), **adam)
        self.opt_mi = torch.optim.Adam(itertools.chain(self.f1.parameters(), self.f2.parameters()), **adam)
        self.batch_gen = self.streams.torch_generator('batching')

    # -- pasos del algoritmo ---------------------------------------------------

    def train_step_main(self, h_v: torch.Tensor, h_h: torch.Tensor) -> Dict[str, float]:
        """Paso 1: solo cambian los parámetros de encoder/decoder."""
        tc = self.train_config
        self.model.train()
        self.opt_main.zero_grad(set_to_none=True)
        terms = total_loss(self.model, self.f1, self.f2, h_v, h_h, tc.lam, tc.mi_target)
        if not torch.isfinite(terms.loss):
            raise NonFiniteError('loss', f"Pérdida no finita en el paso {self.step}")
        terms.loss.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), tc.grad_clip)
        self.opt_main.step()
        self.step += 1
        return {'loss': terms.loss.item(), 'mse': terms.mse.item(), 'mi': terms.mi.item(),
                'mi_joint': terms.i_joint.item(), 'mi_pol': terms.i_pol.item()}

    def train_step_mi(self, h_v: torch.Tensor, h_h: torch.Tensor) -> Dict[str, float]:
        """Paso 2: solo cambian f1 y f2; W sale del encoder congelado."""
        previo = self.model.training
        self.model.eval()
        with torch.no_grad():
            w = self.model.encode(h_v, h_h).w
        self.model.train(previo)

        self.f1.train()
        self.f2.train()
        self.opt_mi.zero_grad(set_to_none=True)
        nll_1 = club_nll_loss(joint_inputs(h_v, h_h), w, self.f1)
        nll_2 = club_nll_loss(h_v, h_h, self.f2)
        perdida = nll_1 + nll_2
        if not torch.isfinite(perdida):
            raise NonFiniteError('mi.loss', f"Pérdida CLUB no finita en el paso {self.step}")
        perdida.backward()
        self.opt_mi.step()
        return {'nll_f1': nll_1.item(), 'nll_f2': nll_2.item()}

    # -- evaluación ------------------------------------------------------------

    @torch.no_grad()
    def mi_eval(self, h_v: torch.Tensor, h_h: torch.Tensor) -> Tuple[float, float]:
        """Términos MI medios sobre lotes consecutivos (orden fijo)."""
        self.model.eval()
        bs = self.train_config.batch_size
        joint, pol = [], []
        for inicio in range(0, h_v.shape[0], bs):
            v, h = h_v[inicio:inicio + bs], h_h[inicio:inicio + bs]
            if v.shape[0] < 2:
                continue
            w = self.model.encode(v, h).w
            i_joint, i_pol = mi_terms(v, h, w, self.f1, self.f2)
            joint.append(i_joint.item())
            pol.append(i_pol.item())
        if not joint:
            raise BatchTooSmallError(f"Ningún lote de validación tiene 2 muestras o más "
                                     f"(muestras={h_v.shape[0]}, batch_size={bs})")
        return float(np.mean(joint)), float(np.mean(pol))

    def validate(self, h_v: torch.Tensor, h_h: torch.Tensor, truth: CsiDataset, scaler: NormScaler) -> Dict[str, float]:
        hat_v, hat_h = reconstruct_arrays(self.model, h_v, h_h, self.train_config.batch_size)
        rec_v, rec_h = chanlab.from_network_arrays(hat_v, hat_h, scaler)
        nmse = nmse_per_sample(rec_v, rec_h, truth.h_v, truth.h_h)
        i_joint, i_pol = self.mi_eval(h_v, h_h)
        return {'val_nmse_db': to_db(np.mean(nmse)), 'mi_joint': i_joint, 'mi_pol': i_pol,
                'mi_gap': i_joint - i_pol}

    # -- almacén ---------------------------------------------------------------

    def snapshot(self, meta: Optional[Dict[str, str]] = None) -> ParameterStore:
        store = ParameterStore.from_module(self.model, self.config, seed=self.seed, step=self.step, meta=meta)
        store.extra = estimator_tensors(self.f1, self.f2)
        store.meta.update(mi_f1_dims=self.f1.dims(), mi_f2_dims=self.f2.dims())
        return store

    # -- bucle externo ---------------------------------------------------------

    @log_config_on_error
    def fit(self, train: CsiDataset, val: CsiDataset, out_dir: Optional[str] = None,
            progress: bool = True) -> Tuple[ParameterStore, TrainHistory]:
        """
        Presupuesto fijo de épocas con checkpoint del mejor NMSE de validación.

        Args:
            train: Split de entrenamiento sin normalizar (ahí se ajusta el normalizador)
            val: Split de validación sin normalizar
            out_dir: Directorio de checkpoints e historial (None = sin archivos)

        Returns:
            Tuple (mejor ParameterStore, TrainHistory)
        """
        tc = self.train_config
        scaler = chanlab.fit_normalizer(train)
        train_n, _ = chanlab.apply_normalizer(train, scaler)
        val_n, recortes = chanlab.apply_normalizer(val, scaler)
        if recortes:
            logger.info(f"✂️ Validación: {recortes} entradas fuera del rango de entrenamiento")
        meta = {'scaler_lo': repr(scaler.lo), 'scaler_hi': repr(scaler.hi)}

        h_v, h_h = dataset_tensors(train_n, self.device)
        v_v, v_h = dataset_tensors(val_n, self.device)
        n = h_v.shape[0]
        if n < 2:
            raise ConfigurationError(f"Se necesitan al menos 2 muestras de entrenamiento, hay {n}")

        history = TrainHistory()
        history.baseline = self.validate(v_v, v_h, val, scaler)
        logger.info(f"🚀 Entrenando {tc.epochs} épocas, {n} muestras, lote {tc.batch_size}, "
                    f"λ={tc.lam}, δ={tc.mi_target:.4f} nats | base {history.baseline['val_nmse_db']:.2f} dB")

        best_store = self.snapshot(meta)
        best_nmse = float('inf')
        rutas = {nombre: os.path.join(out_dir, f"{nombre}.ckpt") for nombre in ('best', 'last', 'final', 'last_good')} \
            if out_dir else {}

        for epoch in tqdm(range(1, tc.epochs + 1), desc="Épocas", disable=not progress):
            inicio = time.perf_counter()
            seguro = self.snapshot(meta)
            try:
                acumulado = self._run_epoch(h_v, h_h)
                record = {'epoch': epoch, **acumulado, **self.validate(v_v, v_h, val, scaler)}
            except NonFiniteError as e:
                ruta = write_checkpoint(seguro, rutas['last_good']) if rutas else None
                if out_dir:
                    history.write(out_dir)
                logger.error(f"❌ Divergencia en la época {epoch} ({e.layer}); último estado válido: {ruta}")
                raise TrainingDivergedError(f"Entrenamiento divergente en la época {epoch}: {e}", ruta) from e

            history.append(record, time.perf_counter() - inicio)
            logger.info(f"📊 Época {epoch}: mse={record['train_mse']:.5f} mi={record['train_mi']:.4f} "
                        f"val={record['val_nmse_db']:.2f} dB gap={record['mi_gap']:.4f}")

            if record['val_nmse_db'] < best_nmse:
                best_nmse = record['val_nmse_db']
                best_store = self.snapshot(meta)
                if rutas:
                    write_checkpoint(best_store, rutas['best'])
            if rutas and epoch % tc.checkpoint_every == 0:
                write_checkpoint(self.snapshot(meta), rutas['last'])

        final_store = self.snapshot(meta)
        # rangos de cuantización desde latentes de entrenamiento del mejor modelo
        mejor = best_store.build(str(self.device))
        rangos = ranges_to_meta(fit_ranges(encode_arrays(mejor, h_v, h_h, tc.batch_size)))
        best_store.meta.update(rangos)
        final_store.meta.update(rangos)

        if rutas:
            write_checkpoint(final_store, rutas['final'])
            write_checkpoint(best_store, rutas['best'])
            history.write(out_dir)
        if history.records:
            logger.info(f"✅ Mejor validación: {best_nmse:.2f} dB")
        return best_store, history

    def _run_epoch(self, h_v: torch.Tensor, h_h: torch.Tensor) -> Dict[str, float]:
        bs = self.train_config.batch_size
        orden = torch.randperm(h_v.shape[0], generator=self.batch_gen).to(self.device)
        suma = {'train_mse': 0.0, 'train_mi': 0.0, 'train_loss': 0.0}
        lotes = 0
        for inicio in range(0, h_v.shape[0], bs):
            idx = orden[inicio:inicio + bs]
            if idx.numel() < 2:
                continue
            v, h = h_v[idx], h_h[idx]
            m = self.train_step_main(v, h)
            self.train_step_mi(v, h)
            suma['train_mse'] += m['mse']
            suma['train_mi'] += m['mi']
            suma['train_loss'] += m['loss']
            lotes += 1
        return {k: s / max(lotes, 1) for k, s in suma.items()}


def fit(train: CsiDataset, val: CsiDataset, config: ModelConfig, train_config: TrainConfig,
        out_dir: Optional[str] = None, estimator_seed: Optional[int] = None,
        progress: bool = True) -> Tuple[ParameterStore, TrainHistory]:
    return Trainer(config, train_config, estimator_seed=estimator_seed).fit(train, val, out_dir, progress)


def reconstruct(store: ParameterStore, dataset: CsiDataset, batch_size: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    """Reconstrucción desnormalizada (h_v, h_h) de un split crudo con el normalizador del checkpoint."""
    scaler = scaler_from_store(store)
    modelo = store.build()
    normalizado, _ = chanlab.apply_normalizer(dataset, scaler)
    h_v, h_h = chanlab.to_network_arrays(normalizado)
    hat_v, hat_h = reconstruct_arrays(modelo, h_v, h_h, batch_size)
    return chanlab.from_network_arrays(hat_v, hat_h, scaler)


def evaluate(store: ParameterStore, dataset: CsiDataset, batch_size: int = 256) -> np.ndarray:
    """NMSE lineal por muestra de un checkpoint sobre un split sin normalizar."""
    rec_v, rec_h = reconstruct(store, dataset, batch_size)
    return nmse_per_sample(rec_v, rec_h, dataset.h_v, dataset.h_h)


def scaler_from_store(store: ParameterStore) -> NormScaler:
    if 'scaler_lo' not in store.meta:
        raise ConfigurationError("El checkpoint no registra el normalizador de entrenamiento")
    return NormScaler(lo=float(store.meta['scaler_lo']), hi=float(store.meta['scaler_hi']))


# ---------------------------------------------------------------------------
# Barridos
# ---------------------------------------------------------------------------

def sweep_mi_targets(train: CsiDataset, val: CsiDataset, config: ModelConfig, train_config: TrainConfig,
                     targets_bits: Sequence[float], out_dir: Optional[str] = None) -> pd.DataFrame:
    """NMSE de validación frente a la distancia MI objetivo δ (en bits)."""
    filas = []
    for bits in targets_bits:
        tc = train_config.model_copy(update={'mi_target': bits * LN2})
        sub = os.path.join(out_dir, f"delta_{bits:g}bit") if out_dir else None
        _, history = fit(train, val, config, tc, out_dir=sub, progress=False)
        mejor = history.best() or history.baseline
        filas.append({'mi_target_bits': bits, 'best_val_nmse_db': mejor['val_nmse_db'],
                      'mi_gap_bits': mejor['mi_gap'] / LN2})
        logger.info(f"📊 δ={bits:g} bit → {mejor['val_nmse_db']:.2f} dB")
    return pd.DataFrame(filas)


def sweep_extensions(train: CsiDataset, val: CsiDataset, config: ModelConfig, train_config: TrainConfig,
                     depths: Sequence[int], widths: Sequence[int], out_dir: Optional[str] = None) -> pd.DataFrame:
    """Compromiso NMSE / parámetros de las extensiones de profundidad y anchura del decoder."""
    filas = []
    for depth, width in itertools.product(depths, widths):
        cfg = config.model_copy(update={'depth': depth, 'width': width})
        cuenta = count_params_actual(cfg)
        sub = os.path.join(out_dir, f"d{depth}_w{width}") if out_dir else None
        _, history = fit(train, val, cfg, train_config, out_dir=sub, progress=False)
        mejor = history.best() or history.baseline
        filas.append({'depth': depth, 'width': width, 'params_total': cuenta.total,
                      'decoder_trunk': cuenta.decoder_trunk, 'best_val_nmse_db': mejor['val_nmse_db']})
        logger.info(f"📊 D={depth} Wd={width}: {cuenta.total} parámetros → {mejor['val_nmse_db']:.2f} dB")
    return pd.DataFrame(filas)


# ---------------------------------------------------------------------------
# Verificación de gradientes por diferencias finitas
# ---------------------------------------------------------------------------

@dataclass
class TensorCheck:
    name: str
    group: str
    checked: int
    kinked: int
    max_rel_err: float
    passed: bool


@dataclass
class GradcheckReport:
    tensors: List[TensorCheck]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tensors)

    @property
    def failures(self) -> List[str]:
        return [t.name for t in self.tensors if not t.passed]

    @property
    def unverified(self) -> List[str]:
        return [t.name for t in self.tensors if t.checked == 0]

    def groups(self) -> Dict[str, float]:
        """Error relativo máximo por grupo (encoder / decoder / f1 / f2)."""
        salida: Dict[str, float] = {}
        for t in self.tensors:
            salida[t.group] = max(salida.get(t.group, 0.0), t.max_rel_err)
        return salida

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([t.__dict__ for t in self.tensors])


def gradcheck_config() -> ModelConfig:
    return ModelConfig(n_s=8, n_t=8, sigma=4.0, conv_channels=4, depth=1, width=1)


class _KinkDetector:
    """Registra qué entradas de las activaciones lineales a trozos son positivas."""

    def __init__(self, modules: Sequence[torch.nn.Module]):
        self.patrones: List[torch.Tensor] = []
        self.handles = [m.register_forward_hook(self._hook) for mod in modules for m in mod.modules()
                        if isinstance(m, (torch.nn.LeakyReLU, torch.nn.ReLU))]

    def _hook(self, module, inputs, output):
        self.patrones.append(inputs[0].detach() > 0)

    def capture(self, fn):
        self.patrones = []
        valor = fn()
        return valor, self.patrones

    def close(self):
        for h in self.handles:
            h.remove()


def finite_diff_gradcheck(config: Optional[ModelConfig] = None, seed: int = 0, batch: int = 3,
                          max_entries: Optional[int] = 64, corrupt: Optional[str] = None,
                          step: Optional[float] = None, tolerance: Optional[float] = None,
                          atol: Optional[float] = None) -> GradcheckReport:
    """
    Compara gradientes analíticos con diferencias centrales en f64.

    Pérdida del modelo: L_MSE + 1·L_MI (estimadores fijos). Pérdida de los
    estimadores: NLL de f1 y f2 con W fijo. Si la perturbación cambia el
    signo de alguna activación (punto no diferenciable) se reintenta con pasos
    menores; si todos cruzan, la entrada se cuenta como quiebre y se muestrea
    otra. Un tensor sin ninguna entrada revisada no pasa.

    Args:
        corrupt: nombre de un tensor cuyo gradiente analítico se anula (inyección de fallas)
    """
    step = step or settings.GRADCHECK_STEP
    tolerance = tolerance or settings.GRADCHECK_TOLERANCE
    atol = atol or settings.GRADCHECK_ATOL
    config = config or gradcheck_config()
    streams = SeedStreams(seed)

    modelo = build_model(config, streams.seed_for('init')).double().eval()
    mi_gen = torch.Generator()
    mi_gen.manual_seed(streams.seed_for('mi_init'))
    f1, f2 = (f.double().eval() for f in build_estimators(config.n_s, config.n_t, 16, mi_gen))

    datos = chanlab.generate_dataset(ScenarioConfig.from_preset('cdl-a'), batch, config.n_s, config.n_t,
                                     streams.seed_for('gradcheck'))
    normalizado, _ = chanlab.apply_normalizer(datos, chanlab.fit_normalizer(datos))
    h_v, h_h = dataset_tensors(normalizado, 'cpu', torch.float64)

    def perdida_modelo():
        hat_v, hat_h, enc = modelo(h_v, h_h)
        i_joint, i_pol = mi_terms(h_v, h_h, enc.w, f1, f2)
        return mse_loss(hat_v, hat_h, h_v, h_h) + mi_distance(i_joint, i_pol)

    def perdida_estimadores():
        with torch.no_grad():
            w = modelo.encode(h_v, h_h).w
        return club_nll_loss(joint_inputs(h_v, h_h), w, f1) + club_nll_loss(h_v, h_h, f2)

    tensores = [(n, p, perdida_modelo) for n, p in modelo.named_parameters()]
    tensores += [(f"mi.f1.{n}", p, perdida_estimadores) for n, p in f1.named_parameters()]
    tensores += [(f"mi.f2.{n}", p, perdida_estimadores) for n, p in f2.named_parameters()]
    nombres = [n for n, _, _ in tensores]
    if corrupt is not None and corrupt not in nombres:
        raise ConfigurationError(f"Tensor desconocido para inyectar la falla: {corrupt}")

    # gradientes analíticos
    for mod in (modelo, f1, f2):
        mod.zero_grad(set_to_none=True)
    perdida_modelo().backward()
    analiticos = {n: p.grad.detach().clone() for n, p in modelo.named_parameters()}
    for mod in (f1, f2):
        mod.zero_grad(set_to_none=True)
    perdida_estimadores().backward()
    for etiqueta, est in (('f1', f1), ('f2', f2)):
        for n, p in est.named_parameters():
            analiticos[f"mi.{etiqueta}.{n}"] = p.grad.detach().clone()
    if corrupt is not None:
        analiticos[corrupt].zero_()

    sonda = _KinkDetector([modelo, f1, f2])
    muestreo = streams.torch_generator('gradcheck')
    pasos = [step * 10.0 ** -k for k in range(settings.GRADCHECK_STEP_RETRIES + 1)]

    def diferencia_central(plano, i, fn) -> Optional[float]:
        """Diferencia central con el mayor paso que no cruza un quiebre; None si todos cruzan."""
        original = plano[i].item()
        try:
            for h in pasos:
                plano[i] = original + h
                l_mas, pat_mas = sonda.capture(fn)
                plano[i] = original - h
                l_menos, pat_menos = sonda.capture(fn)
                if all(torch.equal(a, b) for a, b in zip(pat_mas, pat_menos)):
                    return (l_mas.item() - l_menos.item()) / (2 * h)
            return None
        finally:
            plano[i] = original

    resultados = []
    try:
        with torch.no_grad():
            for nombre, p, fn in tensores:
                plano = p.view(-1)
                total = plano.numel()
                if max_entries is not None and total > max_entries:
                    orden = torch.randperm(total, generator=muestreo)[:settings.GRADCHECK_MAX_DRAWS * max_entries]
                    orden, objetivo = orden.tolist(), max_entries
                else:
                    orden, objetivo = list(range(total)), total
                grad = analiticos[nombre].view(-1)
                peor, revisados, quiebres = 0.0, 0, 0
                # se sigue muestreando hasta reunir `objetivo` entradas diferenciables
                for i in orden:
                    if revisados >= objetivo:
                        break
                    numerico = diferencia_central(plano, i, fn)
                    if numerico is None:
                        quiebres += 1
                        continue
                    analitico = grad[i].item()
                    diferencia = abs(analitico - numerico)
                    if diferencia > atol:
                        peor = max(peor, diferencia / max(abs(analitico), abs(numerico)))
                    revisados += 1
                if revisados == 0:
                    logger.warning(f"⚠️ {nombre}: ninguna entrada diferenciable; tensor sin verificar")
                resultados.append(TensorCheck(name=nombre, group=parameter_group(nombre), checked=revisados,
                                              kinked=quiebres, max_rel_err=peor,
                                              passed=revisados > 0 and peor <= tolerance))
    finally:
        sonda.close()

    reporte = GradcheckReport(tensors=resultados, tolerance=tolerance)
    estado = "✅ PASS" if reporte.passed else f"❌ FAIL ({', '.join(reporte.failures)})"
    logger.info(f"🔬 Gradcheck seed={seed}: {estado} | {reporte.groups()}")
    return reporte
