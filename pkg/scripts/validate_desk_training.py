import argparse
import logging
import os
import sys

import numpy as np
import pandas as pd

# Add parent to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core import chanlab, evalkit, quant, trainer
from core.seeds import SeedStreams
from strict_models import ModelConfig, QuantConfig, ScenarioConfig, TrainConfig

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(message)s')
logger = logging.getLogger(__name__)

UMBRAL_NMSE_DB = -10.0
MARGEN_BASELINE_DB = 2.0
MARGEN_16_BITS_DB = 0.1


def _nmse_cuantizado(store, val, q_sa: int, q_sp: int) -> float:
    scaler = trainer.scaler_from_store(store)
    modelo = store.build()
    normalizado, _ = chanlab.apply_normalizer(val, scaler)
    h_v, h_h = chanlab.to_network_arrays(normalizado)
    qcfg = QuantConfig(q_sa=q_sa, q_sp=q_sp, ranges=quant.ranges_from_meta(store.meta))
    resultado = quant.quantized_inference(modelo, h_v, h_h, qcfg)
    rec_v, rec_h = chanlab.from_network_arrays(resultado.hat_v, resultado.hat_h, scaler)
    return evalkit.nmse_db(rec_v, rec_h, val.h_v, val.h_h)


def validate_desk_training(n_train: int, n_val: int, epochs: int, device: str, seed: int,
                           out_dir: str, repro: bool) -> bool:
    logger.info(f"🏋️ Entrenamiento de escritorio: {n_train}/{n_val} muestras, {epochs} épocas, σ=8")

    streams = SeedStreams(seed)
    escenario = ScenarioConfig.from_preset('cdl-a')
    datos = chanlab.generate_dataset(escenario, n_train + n_val, 32, 32, streams.seed_for('data'))
    train, val = datos.subset(range(n_train)), datos.subset(range(n_train, n_train + n_val))

    config = ModelConfig(n_s=32, n_t=32, sigma=8)
    tc = TrainConfig(epochs=epochs, seed=seed, device=device)
    store, history = trainer.fit(train, val, config, tc, out_dir=out_dir)
    mejor = history.best()
    exito = True

    # 1. NMSE frente al umbral y a la línea base lineal de igual dimensión retenida
    base = evalkit.LinearBaseline.fit(train, sigma=config.sigma)
    nmse_base = base.nmse_db(val)
    ok_umbral = mejor['val_nmse_db'] <= UMBRAL_NMSE_DB
    ok_base = mejor['val_nmse_db'] <= nmse_base - MARGEN_BASELINE_DB
    exito &= ok_umbral and ok_base
    logger.info(f"\n📊 NMSE validación: {mejor['val_nmse_db']:.2f} dB (época {int(mejor['epoch'])})")
    logger.info(f"   {'✅' if ok_umbral else '❌'} ≤ {UMBRAL_NMSE_DB} dB")
    logger.info(f"   {'✅' if ok_base else '❌'} línea base lineal ({base.retained} coeficientes): {nmse_base:.2f} dB, "
                f"margen {nmse_base - mejor['val_nmse_db']:.2f} dB")

    # 2. Tendencia de convergencia: media móvil de 20 épocas no creciente (≤ 5 % de violaciones)
    mse = history.to_frame()['train_mse']
    media = mse.rolling(20).mean().dropna().to_numpy()
    if media.size > 1:
        violaciones = float(np.mean(np.diff(media) > 0))
        ok = violaciones <= 0.05
        exito &= ok
        logger.info(f"   {'✅' if ok else '❌'} media móvil de L_MSE: {100 * violaciones:.1f}% de pares crecientes")

    # 3. Efecto del regularizador MI
    gap_inicial, gap_mejor = abs(history.baseline['mi_gap']), abs(mejor['mi_gap'])
    ok = gap_mejor < gap_inicial
    exito &= ok
    logger.info(f"   {'✅' if ok else '❌'} |Î_joint − Î_pol|: {gap_inicial:.4f} → {gap_mejor:.4f} nats")

    # 4. Cuantización
    sin_cuantizar = evalkit.to_db(np.mean(trainer.evaluate(store, val)))
    niveles = {(q, q): _nmse_cuantizado(store, val, q, q) for q in (2, 4, 6, 16)}
    ok_16 = abs(niveles[(16, 16)] - sin_cuantizar) <= MARGEN_16_BITS_DB
    ok_mono = niveles[(2, 2)] >= niveles[(4, 4)] >= niveles[(6, 6)]
    dividido, parejo = _nmse_cuantizado(store, val, 6, 3), _nmse_cuantizado(store, val, 3, 3)
    ok_dividido = dividido <= parejo
    exito &= ok_16 and ok_mono and ok_dividido
    tabla = pd.DataFrame([{'q': q, 'nmse_db': v} for (q, _), v in niveles.items()])
    logger.info(f"\n📦 Cuantización (sin cuantizar {sin_cuantizar:.2f} dB):\n{tabla.to_string(index=False)}")
    logger.info(f"   {'✅' if ok_16 else '❌'} (16,16) a menos de {MARGEN_16_BITS_DB} dB")
    logger.info(f"   {'✅' if ok_mono else '❌'} monótono en (2,2) → (4,4) → (6,6)")
    logger.info(f"   {'✅' if ok_dividido else '❌'} reparto desigual (6,3): {dividido:.2f} dB ≤ (3,3): {parejo:.2f} dB")

    # 5. Reproducibilidad
    if repro:
        _, otra = trainer.fit(train, val, config, tc, progress=False)
        ok = otra.to_frame().equals(history.to_frame())
        exito &= ok
        logger.info(f"   {'✅' if ok else '❌'} historial idéntico al repetir la corrida")

    logger.info(f"\n{'✅ PASS' if exito else '❌ FAIL'}")
    return exito


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Aceptación del entrenamiento de escritorio")
    parser.add_argument('--train', type=int, default=2000)
    parser.add_argument('--val', type=int, default=500)
    parser.add_argument('--epochs', type=int, default=100)
    parser.add_argument('--device', default='cpu')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--out', default=os.path.join('runs', 'desk'))
    parser.add_argument('--repro', action='store_true', help="Repetir la corrida y comparar el historial")
    args = parser.parse_args()
    sys.exit(0 if validate_desk_training(args.train, args.val, args.epochs, args.device, args.seed,
                                         args.out, args.repro) else 1)
