import logging
import os
import sys

import numpy as np

# Add parent to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config import settings
from core import chanlab, evalkit
from strict_models import ScenarioConfig

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(message)s')
logger = logging.getLogger(__name__)

PENDIENTE_ESPERADA = np.log2(10.0) / 10.0 * 3.0      # 1 bit por cada 3 dB


def validate_rate(seed: int = 0) -> bool:
    logger.info("📡 Sanidad de ZF y tasa alcanzable")
    exito = True

    # 1. Interferencia con CSI perfecta
    rng = np.random.default_rng(seed)
    peor = 0.0
    for _ in range(200):
        users = rng.standard_normal((4, 32)) + 1j * rng.standard_normal((4, 32))
        peor = max(peor, evalkit.interference_ratio(users, evalkit.zf_precode(users).v))
    ok = peor <= 1e-8
    exito &= ok
    logger.info(f"   {'✅' if ok else '❌'} interferencia máxima con CSI perfecta: {peor:.2e}")

    # 2. CSI recuperada (línea base lineal σ=8) frente a CSI perfecta
    escenario = ScenarioConfig.from_preset('cdl-b')
    train = chanlab.generate_dataset(escenario, 1000, 32, 32, seed=seed)
    prueba = chanlab.generate_dataset(escenario, 200, 32, 32, seed=seed + 1)
    hat_v, hat_h = evalkit.LinearBaseline.fit(train, sigma=8).reconstruct(prueba)
    snr = list(settings.SNR_GRID_DB)
    tabla = evalkit.rate_table(prueba, hat_v, hat_h, trials=settings.RATE_TRIALS, snr_grid_db=snr, seed=seed)
    logger.info(f"\n{tabla.to_string(index=False)}")
    fraccion = float(np.mean(tabla['rate_recovered'] <= tabla['rate_perfect'] + 1e-12))
    ok = fraccion >= 0.95
    exito &= ok
    logger.info(f"   {'✅' if ok else '❌'} tasa recuperada ≤ perfecta en {100 * fraccion:.0f}% de la grilla")

    # 3. Pendiente a SNR alta (por usuario, CSI perfecta)
    alto = tabla.tail(2)
    pendiente = float(np.diff(alto['rate_perfect'])[0] / np.diff(alto['snr_db'])[0] * 3.0)
    ok = abs(pendiente - PENDIENTE_ESPERADA) <= 0.15 * PENDIENTE_ESPERADA
    exito &= ok
    logger.info(f"   {'✅' if ok else '❌'} pendiente a SNR alta: {pendiente:.3f} bit / 3 dB "
                f"(esperado {PENDIENTE_ESPERADA:.3f})")

    logger.info(f"\n{'✅ PASS' if exito else '❌ FAIL'}")
    return exito


if __name__ == "__main__":
    sys.exit(0 if validate_rate() else 1)
