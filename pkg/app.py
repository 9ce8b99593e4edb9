"""
Laboratorio de compresión de CSI dual-polarizada - front end de línea de comandos
Generación de datos, entrenamiento DiReNet, cuantización y evaluación
"""

import argparse
import logging
import os
import sys
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

# Agregar paths necesarios
sys.path.append(os.path.dirname(__file__))

from config import get_descripcion_escenario, settings
from core import chanlab, dataset_io, evalkit, quant, trainer
from core.checkpoint import read_checkpoint, write_checkpoint
from core.direnet import count_fc_params, count_params_actual, encode_arrays, latent_length
from core.errors import CsiLabError
from core.seeds import STREAMS, SeedStreams
from strict_models import RunConfig
from utils import ReportWriter, load_config_file, write_manifest

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

# flag → campo de RunConfig
FLAGS = {
    'scenario': dict(dest='scenario', type=str, help="Escenario (cdl-a, cdl-b, cdl-c, quadriga-like)"),
    'kappa': dict(dest='kappa', type=float, help="Acoplamiento de fase κ (sobrescribe el preset)"),
    'calibrate': dict(dest='calibrate', action='store_true', default=None, help="Calibrar κ a target_gcs"),
    'count': dict(dest='count', type=int, help="Número de muestras"),
    'ns': dict(dest='n_s', type=int, help="Subbandas N_s"),
    'nt': dict(dest='n_t', type=int, help="Antenas N_t (par)"),
    'seed': dict(dest='seed', type=int, help="Semilla de la corrida"),
    'sigma': dict(dest='sigma', type=float, help="Relación de compresión σ"),
    'channels': dict(dest='conv_channels', type=int, help="Canales de los bloques convolucionales"),
    'depth': dict(dest='depth', type=int, help="Bloques IR por camino (D)"),
    'width': dict(dest='width', type=int, help="Caminos paralelos del decoder (Wd)"),
    'epochs': dict(dest='epochs', type=int, help="Épocas"),
    'batch': dict(dest='batch_size', type=int, help="Tamaño de lote"),
    'lr': dict(dest='lr', type=float, help="Tasa de aprendizaje"),
    'lambda': dict(dest='lam', type=float, help="Peso λ del regularizador MI"),
    'mi-target-bits': dict(dest='mi_target_bits', type=float, help="Distancia MI objetivo δ (bits)"),
    'targets': dict(dest='mi_targets_bits', type=str, help="Lista de δ en bits, separada por comas"),
    'depths': dict(dest='depths', type=str, help="Lista de profundidades D"),
    'widths': dict(dest='widths', type=str, help="Lista de anchos Wd"),
    'device': dict(dest='device', type=str, help="Dispositivo torch (cpu, cuda)"),
    'qsa': dict(dest='q_sa', type=int, help="Bits por elemento de z_w"),
    'qsp': dict(dest='q_sp', type=int, help="Bits por elemento de z_v y z_h"),
    'users': dict(dest='users', type=int, help="Usuarios simultáneos (ZF)"),
    'trials': dict(dest='trials', type=int, help="Ensayos de Monte Carlo"),
    'snr-grid': dict(dest='snr_grid', type=str, help="Grilla de SNR en dB, separada por comas"),
    'data': dict(dest='data', type=str, help="Archivo DPCSI1"),
    'val': dict(dest='val', type=str, help="Archivo DPCSI1 de validación"),
    'ckpt': dict(dest='ckpt', type=str, help="Checkpoint DPCKPT1"),
    'out': dict(dest='out', type=str, help="Ruta de salida"),
    'report': dict(dest='report', type=str, help="Directorio de reportes"),
    'inputs': dict(dest='inputs', type=str, help="Lista de archivos de entrada, separada por comas"),
}

TRAIN_FLAGS = ['data', 'val', 'sigma', 'channels', 'depth', 'width', 'epochs', 'batch', 'lr', 'lambda',
               'mi-target-bits', 'seed', 'device', 'out']

# claves que el manifiesto agrega y que no son campos de RunConfig
MANIFEST_ONLY_KEYS = frozenset({f"seed_{s}" for s in STREAMS} | {'kappa_used'})

COMMAND_FLAGS = {
    'gen-data': ['scenario', 'kappa', 'calibrate', 'count', 'ns', 'nt', 'seed', 'out'],
    'inspect-gcs': ['data', 'report'],
    'train': TRAIN_FLAGS,
    'eval': ['ckpt', 'data', 'report'],
    'quant-eval': ['ckpt', 'data', 'qsa', 'qsp', 'report'],
    'bits': ['ns', 'nt', 'sigma', 'qsa', 'qsp'],
    'params': ['ns', 'nt', 'sigma', 'channels', 'depth', 'width'],
    'rate': ['ckpt', 'data', 'users', 'trials', 'snr-grid', 'seed', 'report'],
    'sweep-mi': TRAIN_FLAGS + ['targets'],
    'gradcheck': ['seed', 'out'],
    'calibrate': ['scenario', 'count', 'ns', 'nt', 'seed'],
    'import-data': ['inputs', 'out'],
    'mix-data': ['inputs', 'count', 'seed', 'out'],
    'sweep-ext': TRAIN_FLAGS + ['depths', 'widths'],
    'ablation': ['data', 'report'],
}

COMMAND_HELP = {
    'gen-data': "Generar un dataset sintético multitrayecto",
    'inspect-gcs': "Resumen de GCS en cinco variantes",
    'train': "Entrenar DiReNet (dos pasos alternados)",
    'eval': "NMSE y CDF de un checkpoint",
    'quant-eval': "NMSE con latentes cuantizados y reporte de bits",
    'bits': "Bits de realimentación nominales y reales",
    'params': "Conteo de parámetros FC y por módulo",
    'rate': "Tasa alcanzable con precodificación ZF",
    'sweep-mi': "Barrido de la distancia MI objetivo",
    'gradcheck': "Verificación de gradientes por diferencias finitas",
    'calibrate': "Calibrar κ de un escenario a su GCS objetivo",
    'import-data': "Importar CSI externa (.npz) a DPCSI1",
    'mix-data': "Mezclar varios datasets en uno",
    'sweep-ext': "Barrido de profundidad y anchura del decoder",
    'ablation': "Errores de las transformaciones DR-MP y DR-AS",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='app.py', description="Laboratorio de compresión de CSI dual-polarizada")
    parser.add_argument('--log-level', default=settings.LOG_LEVEL, help="Nivel de logging")
    subparsers = parser.add_subparsers(dest='command', required=True)
    for comando, flags in COMMAND_FLAGS.items():
        sub = subparsers.add_parser(comando, help=COMMAND_HELP[comando])
        sub.add_argument('--config', dest='config_file', default=None, help="Archivo clave = valor")
        for flag in flags:
            opciones = dict(FLAGS[flag])
            opciones.setdefault('default', None)
            sub.add_argument(f'--{flag}', **opciones)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < archivo de configuración < flags, validado antes de cualquier trabajo."""
    datos: Dict[str, object] = {}
    if args.config_file:
        archivo = load_config_file(args.config_file)
        datos.update({k: v for k, v in archivo.items() if k not in MANIFEST_ONLY_KEYS})
    for flag in COMMAND_FLAGS[args.command]:
        destino = FLAGS[flag]['dest']
        valor = getattr(args, destino, None)
        if valor is not None:
            datos[destino] = valor
    datos['command'] = args.command
    return RunConfig(**datos)


# ---------------------------------------------------------------------------
# Utilidades de comandos
# ---------------------------------------------------------------------------

def _require(cfg: RunConfig, *campos: str):
    faltantes = [c for c in campos if getattr(cfg, c) in (None, [])]
    if faltantes:
        raise ValueError(f"{cfg.command}: faltan parámetros requeridos: {', '.join(faltantes)}")


def _run_dir(cfg: RunConfig) -> Optional[str]:
    if cfg.report:
        return cfg.report
    if cfg.out:
        return os.path.dirname(os.path.abspath(cfg.out))
    return None


def _manifest(cfg: RunConfig, run_dir: Optional[str], **extra):
    if run_dir is None:
        return None
    datos = cfg.to_manifest()
    datos.update(SeedStreams(cfg.seed).as_dict())
    datos.update({k: str(v) for k, v in extra.items()})
    return write_manifest(run_dir, datos)


def _train_val(cfg: RunConfig):
    _require(cfg, 'data')
    datos = dataset_io.read_dataset(cfg.data)
    if cfg.val:
        return datos, dataset_io.read_dataset(cfg.val)
    train, val = chanlab.split_dataset(datos, [0.9, 0.1], SeedStreams(cfg.seed).seed_for('split'))
    logger.info(f"✂️ Sin --val: partición 90/10 → {len(train)}/{len(val)}")
    return train, val


# ---------------------------------------------------------------------------
# Comandos
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig) -> int:
    _require(cfg, 'out')
    streams = SeedStreams(cfg.seed)
    logger.info(f"🚀 {get_descripcion_escenario(cfg.scenario)}")
    escenario = cfg.build_scenario_config()
    if cfg.calibrate:
        escenario = chanlab.calibrate_kappa(escenario, cfg.n_s, cfg.n_t, seed=streams.seed_for('data'))
    ds = chanlab.generate_dataset(escenario, cfg.count, cfg.n_s, cfg.n_t, streams.seed_for('data'))
    dataset_io.write_dataset(ds, cfg.out)
    _manifest(cfg, _run_dir(cfg), kappa_used=escenario.phase_coupling)
    return 0


def cmd_inspect_gcs(cfg: RunConfig) -> int:
    _require(cfg, 'data')
    tabla = evalkit.gcs_table(chanlab.gcs_summary(dataset_io.read_dataset(cfg.data)))
    writer = ReportWriter(cfg.report) if cfg.report else None
    if writer:
        writer.write_table(tabla, 'gcs_summary')
        _manifest(cfg, cfg.report)
    ReportWriter.print_table(tabla, title="GCS por variante (media ± std)")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, 'data', 'out')
    train, val = _train_val(cfg)
    run_dir = _run_dir(cfg)
    _manifest(cfg, run_dir)
    model_cfg = cfg.build_model_config(n_s=train.n_s, n_t=train.n_t)
    best, history = trainer.fit(train, val, model_cfg, cfg.build_train_config(), out_dir=run_dir)
    write_checkpoint(best, cfg.out)
    mejor = history.best()
    if mejor is not None:
        print(f"best_val_nmse_db={mejor['val_nmse_db']:.4f}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    _require(cfg, 'ckpt', 'data', 'report')
    store = read_checkpoint(cfg.ckpt)
    datos = dataset_io.read_dataset(cfg.data)
    por_muestra = trainer.evaluate(store, datos, cfg.batch_size)
    reporte = evalkit.EvalReport.from_nmse(
        por_muestra, gcs=chanlab.gcs_summary(datos), params=count_params_actual(store.config).as_dict(),
        summary={'checkpoint': cfg.ckpt, 'step': store.step})
    evalkit.emit_report(reporte, cfg.report)
    _manifest(cfg, cfg.report)
    print(f"nmse_db={reporte.nmse_db:.4f}")
    return 0


def cmd_quant_eval(cfg: RunConfig) -> int:
    _require(cfg, 'ckpt', 'data', 'report')
    store = read_checkpoint(cfg.ckpt)
    datos = dataset_io.read_dataset(cfg.data)
    scaler = trainer.scaler_from_store(store)
    modelo = store.build()
    normalizado, _ = chanlab.apply_normalizer(datos, scaler)
    h_v, h_h = chanlab.to_network_arrays(normalizado)

    rangos = quant.ranges_from_meta(store.meta)
    if rangos is None:
        logger.warning("⚠️ El checkpoint no trae rangos de cuantización; se ajustan sobre los datos evaluados")
        rangos = quant.fit_ranges(encode_arrays(modelo, h_v, h_h, cfg.batch_size))
    qcfg = cfg.build_quant_config().model_copy(update={'ranges': rangos})

    resultado = quant.quantized_inference(modelo, h_v, h_h, qcfg, cfg.batch_size)
    rec_v, rec_h = chanlab.from_network_arrays(resultado.hat_v, resultado.hat_h, scaler)
    por_muestra = evalkit.nmse_per_sample(rec_v, rec_h, datos.h_v, datos.h_h)
    sin_cuantizar = evalkit.to_db(np.mean(trainer.evaluate(store, datos, cfg.batch_size)))

    bits = quant.bit_table(store.config.n_s, store.config.n_t, [store.config.sigma], [(qcfg.q_sa, qcfg.q_sp)])
    reporte = evalkit.EvalReport.from_nmse(
        por_muestra, bits=bits,
        summary={'q_sa': qcfg.q_sa, 'q_sp': qcfg.q_sp, 'unquantized_nmse_db': sin_cuantizar,
                 'nominal_bits': quant.format_fraction(resultado.bits.nominal), 'actual_bits': resultado.bits.actual})
    evalkit.emit_report(reporte, cfg.report)
    _manifest(cfg, cfg.report)
    print(f"nmse_db={reporte.nmse_db:.4f} unquantized_nmse_db={sin_cuantizar:.4f} "
          f"nominal_bits={quant.format_fraction(resultado.bits.nominal)} actual_bits={resultado.bits.actual}")
    return 0


def cmd_bits(cfg: RunConfig) -> int:
    m = latent_length(cfg.n_s, cfg.n_t, cfg.sigma)
    rep = quant.bit_report(cfg.n_s, cfg.n_t, cfg.sigma, m, cfg.q_sa, cfg.q_sp)
    print(f"latent_len={m}")
    print(f"nominal_bits={quant.format_fraction(rep.nominal)}")
    print(f"actual_bits={rep.actual}")
    return 0


def cmd_params(cfg: RunConfig) -> int:
    p0, p1, p2 = count_fc_params(cfg.n_s, cfg.n_t, cfg.sigma)
    print(f"P0={quant.format_fraction(p0)}")
    print(f"P1={quant.format_fraction(p1)}")
    print(f"P2={quant.format_fraction(p2)}")
    for clave, valor in count_params_actual(cfg.build_model_config()).as_dict().items():
        print(f"{clave}={valor}")
    return 0


def cmd_rate(cfg: RunConfig) -> int:
    _require(cfg, 'ckpt', 'data')
    store = read_checkpoint(cfg.ckpt)
    datos = dataset_io.read_dataset(cfg.data)
    rec_v, rec_h = trainer.reconstruct(store, datos, cfg.batch_size)
    tabla = evalkit.rate_table(datos, rec_v, rec_h, users=cfg.users, trials=cfg.trials,
                               snr_grid_db=cfg.snr_grid, seed=SeedStreams(cfg.seed).seed_for('rate'))
    if tabla.attrs.get('regularized_trials'):
        logger.warning(f"⚠️ {tabla.attrs['regularized_trials']} ensayos con ZF regularizado (canal casi singular)")
    writer = ReportWriter(cfg.report) if cfg.report else None
    if writer:
        writer.write_table(tabla, 'rate')
        _manifest(cfg, cfg.report)
    ReportWriter.print_table(tabla, title="Tasa ZF por usuario (bit/s/Hz)")
    return 0


def cmd_sweep_mi(cfg: RunConfig) -> int:
    _require(cfg, 'data', 'mi_targets_bits')
    train, val = _train_val(cfg)
    run_dir = _run_dir(cfg)
    _manifest(cfg, run_dir)
    tabla = trainer.sweep_mi_targets(train, val, cfg.build_model_config(n_s=train.n_s, n_t=train.n_t),
                                     cfg.build_train_config(), cfg.mi_targets_bits, out_dir=run_dir)
    if run_dir:
        ReportWriter(run_dir).write_table(tabla, 'sweep_mi')
    ReportWriter.print_table(tabla, title="NMSE frente a la distancia MI objetivo")
    return 0


def cmd_sweep_ext(cfg: RunConfig) -> int:
    _require(cfg, 'data')
    train, val = _train_val(cfg)
    run_dir = _run_dir(cfg)
    _manifest(cfg, run_dir)
    tabla = trainer.sweep_extensions(train, val, cfg.build_model_config(n_s=train.n_s, n_t=train.n_t),
                                     cfg.build_train_config(), cfg.depths, cfg.widths, out_dir=run_dir)
    if run_dir:
        ReportWriter(run_dir).write_table(tabla, 'sweep_ext')
    ReportWriter.print_table(tabla, title="NMSE frente a parámetros (D, Wd)")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    reporte = trainer.finite_diff_gradcheck(seed=cfg.seed)
    tabla = reporte.to_frame()
    if cfg.out:
        ReportWriter(_run_dir(cfg)).write_table(tabla, os.path.splitext(os.path.basename(cfg.out))[0])
        _manifest(cfg, _run_dir(cfg))
    ReportWriter.print_table(tabla, title="Verificación de gradientes")
    for grupo, err in reporte.groups().items():
        print(f"{grupo}_max_rel_err={err:.3e}")
    print(f"unverified_tensors={len(reporte.unverified)}")
    print("PASS" if reporte.passed else "FAIL")
    return 0 if reporte.passed else 1


def cmd_calibrate(cfg: RunConfig) -> int:
    escenario = chanlab.calibrate_kappa(cfg.build_scenario_config(), cfg.n_s, cfg.n_t,
                                        seed=SeedStreams(cfg.seed).seed_for('data'))
    print(f"kappa={escenario.phase_coupling:.6f}")
    return 0


def cmd_import_data(cfg: RunConfig) -> int:
    _require(cfg, 'inputs', 'out')
    if len(cfg.inputs) != 1:
        raise ValueError(f"import-data espera un único archivo de entrada, recibidos {len(cfg.inputs)}")
    ds = chanlab.import_dataset(cfg.inputs[0], name=os.path.splitext(os.path.basename(cfg.inputs[0]))[0])
    dataset_io.write_dataset(ds, cfg.out)
    _manifest(cfg, _run_dir(cfg))
    return 0


def cmd_mix_data(cfg: RunConfig) -> int:
    _require(cfg, 'inputs', 'out')
    datasets = [dataset_io.read_dataset(p) for p in cfg.inputs]
    ds = chanlab.mix_datasets(datasets, cfg.count, SeedStreams(cfg.seed).seed_for('data'))
    dataset_io.write_dataset(ds, cfg.out)
    _manifest(cfg, _run_dir(cfg))
    return 0


def cmd_ablation(cfg: RunConfig) -> int:
    _require(cfg, 'data')
    tabla = evalkit.ablation_report(dataset_io.read_dataset(cfg.data))
    writer = ReportWriter(cfg.report) if cfg.report else None
    if writer:
        writer.write_table(tabla, 'ablation')
        _manifest(cfg, cfg.report)
    ReportWriter.print_table(tabla, title="Ablación DR-MP / DR-AS")
    return 0


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    'gen-data': cmd_gen_data,
    'inspect-gcs': cmd_inspect_gcs,
    'train': cmd_train,
    'eval': cmd_eval,
    'quant-eval': cmd_quant_eval,
    'bits': cmd_bits,
    'params': cmd_params,
    'rate': cmd_rate,
    'sweep-mi': cmd_sweep_mi,
    'gradcheck': cmd_gradcheck,
    'calibrate': cmd_calibrate,
    'import-data': cmd_import_data,
    'mix-data': cmd_mix_data,
    'sweep-ext': cmd_sweep_ext,
    'ablation': cmd_ablation,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # Configurar logging
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format=settings.LOG_FORMAT)

    try:
        cfg = resolve_config(args)
        logger.info(f"🚀 {cfg.command} (seed={cfg.seed})")
        codigo = COMMANDS[cfg.command](cfg)
    except (CsiLabError, ValueError, OSError) as e:
        logger.error(f"❌ {args.command}: {e}")
        if isinstance(e, ValidationError):
            mensaje = '; '.join(f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors())
        else:
            mensaje = str(e).splitlines()[0] if str(e) else e.__class__.__name__
        print(f"error: {args.command}: {mensaje}", file=sys.stderr)
        return 1
    if codigo == 0:
        logger.info(f"✅ {cfg.command} completado")
    return codigo


if __name__ == "__main__":
    sys.exit(main())
