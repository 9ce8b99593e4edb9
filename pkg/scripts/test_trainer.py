import os
import sys

import numpy as np
import pandas as pd
import pytest
import torch

# Add parent to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core import chanlab, trainer
from core.checkpoint import read_checkpoint
from core.direnet import parameter_digest, tensor_digest
from core.errors import BatchTooSmallError, ConfigurationError, NonFiniteError, TrainingDivergedError
from core.evalkit import nmse_per_sample, to_db
from core.miest import estimator_tensors
from core.trainer import Trainer
from strict_models import ModelConfig, ScenarioConfig, TrainConfig


def _config():
    return ModelConfig(n_s=8, n_t=8, sigma=4.0, conv_channels=4, depth=1, width=1)


def _train_config(**overrides):
    campos = dict(lr=1e-3, lam=1.0, epochs=2, batch_size=8, mi_hidden=16, seed=3)
    campos.update(overrides)
    return TrainConfig(**campos)


@pytest.fixture(scope='module')
def splits():
    escenario = ScenarioConfig.from_preset('cdl-a')
    return (chanlab.generate_dataset(escenario, 16, 8, 8, seed=1),
            chanlab.generate_dataset(escenario, 6, 8, 8, seed=2))


def _lote(dataset):
    norm, _ = chanlab.apply_normalizer(dataset, chanlab.fit_normalizer(dataset))
    return trainer.dataset_tensors(norm, 'cpu')


def _digest_estimadores(t: Trainer) -> str:
    return tensor_digest(estimator_tensors(t.f1, t.f2).items())


# ---------------------------------------------------------------------------
# Pérdidas
# ---------------------------------------------------------------------------

def test_mse_loss_toy_value():
    h = torch.zeros(1, 2, 2, 2)
    assert trainer.mse_loss(h + 1, h + 1, h, h).item() == pytest.approx(8.0)
    assert trainer.mse_loss(h, h, h, h).item() == 0.0


def test_mse_loss_invariant_to_duplicating_the_batch():
    gen = torch.Generator().manual_seed(0)
    a, b, c, d = (torch.rand(3, 2, 4, 2, generator=gen) for _ in range(4))
    una = trainer.mse_loss(a, b, c, d)
    doble = trainer.mse_loss(*(torch.cat([x, x]) for x in (a, b, c, d)))
    assert una.item() == pytest.approx(doble.item())


def test_combine_losses():
    assert trainer.combine_losses(0.5, 0.1, 0.01) == pytest.approx(0.501)


def test_total_loss_without_regularizer_is_mse(splits):
    t = Trainer(_config(), _train_config(lam=0.0))
    h_v, h_h = _lote(splits[0])
    terms = trainer.total_loss(t.model, t.f1, t.f2, h_v, h_h, lam=0.0)
    assert terms.loss.item() == terms.mse.item()
    assert not terms.mi.requires_grad


# ---------------------------------------------------------------------------
# Aislamiento de los dos pasos
# ---------------------------------------------------------------------------

def test_main_step_leaves_estimators_untouched(splits):
    t = Trainer(_config(), _train_config())
    h_v, h_h = _lote(splits[0])
    antes_modelo, antes_est = parameter_digest(t.model), _digest_estimadores(t)
    t.train_step_main(h_v[:8], h_h[:8])
    assert parameter_digest(t.model) != antes_modelo
    assert _digest_estimadores(t) == antes_est
    assert t.step == 1


def test_mi_step_leaves_model_untouched(splits):
    t = Trainer(_config(), _train_config())
    h_v, h_h = _lote(splits[0])
    antes_modelo, antes_est = parameter_digest(t.model), _digest_estimadores(t)
    buffers = {n: b.clone() for n, b in t.model.named_buffers()}
    t.train_step_mi(h_v[:8], h_h[:8])
    assert parameter_digest(t.model) == antes_modelo
    assert _digest_estimadores(t) != antes_est
    for nombre, b in t.model.named_buffers():
        assert torch.equal(b, buffers[nombre])


def test_main_step_descends_on_fixed_batch(splits):
    t = Trainer(_config(), _train_config(lam=0.0, lr=1e-2))
    h_v, h_h = _lote(splits[0])
    perdidas = [t.train_step_main(h_v, h_h)['mse'] for _ in range(25)]
    assert perdidas[-1] < perdidas[0]


# ---------------------------------------------------------------------------
# Bucle de entrenamiento
# ---------------------------------------------------------------------------

def test_zero_epochs_returns_initial_model(splits):
    store, history = trainer.fit(*splits, _config(), _train_config(epochs=0), progress=False)
    assert len(history) == 0
    assert history.best() is None
    assert 'val_nmse_db' in history.baseline
    assert 'scaler_lo' in store.meta and 'quant_z_w' in store.meta


def test_fit_is_deterministic(splits):
    a_store, a_hist = trainer.fit(*splits, _config(), _train_config(), progress=False)
    b_store, b_hist = trainer.fit(*splits, _config(), _train_config(), progress=False)
    pd.testing.assert_frame_equal(a_hist.to_frame(), b_hist.to_frame())
    assert a_store.digest() == b_store.digest()
    assert list(a_hist.to_frame().columns) == trainer.HISTORY_COLUMNS


def test_fit_writes_checkpoints_and_history(tmp_path, splits):
    train, val = splits
    store, history = trainer.fit(train, val, _config(), _train_config(checkpoint_every=1),
                                 out_dir=str(tmp_path), progress=False)
    for nombre in ('best.ckpt', 'last.ckpt', 'final.ckpt', 'history.csv',
                   'history_timing.csv', 'history_baseline.csv'):
        assert (tmp_path / nombre).exists()
    assert len(pd.read_csv(tmp_path / 'history.csv')) == 2

    mejor = read_checkpoint(str(tmp_path / 'best.ckpt'))
    assert mejor.digest() == store.digest()
    assert mejor.meta['mi_f1_dims'] == store.meta['mi_f1_dims']
    assert set(mejor.extra) == set(store.extra)

    por_muestra = trainer.evaluate(mejor, val)
    assert por_muestra.shape == (len(val),)
    assert to_db(np.mean(por_muestra)) == pytest.approx(history.best()['val_nmse_db'], abs=1e-3)

    rec_v, rec_h = trainer.reconstruct(mejor, val)
    assert rec_v.shape == val.h_v.shape and rec_h.shape == val.h_h.shape
    np.testing.assert_allclose(nmse_per_sample(rec_v, rec_h, val.h_v, val.h_h), por_muestra)


def test_regularizer_off_ignores_estimator_seed(splits):
    cfg = _train_config(lam=0.0)
    _, a = trainer.fit(*splits, _config(), cfg, estimator_seed=1, progress=False)
    _, b = trainer.fit(*splits, _config(), cfg, estimator_seed=2, progress=False)
    for columna in ('train_mse', 'train_loss', 'val_nmse_db'):
        assert a.to_frame()[columna].tolist() == b.to_frame()[columna].tolist()
    assert a.to_frame()['mi_joint'].tolist() != b.to_frame()['mi_joint'].tolist()


def test_divergence_writes_last_good_checkpoint(tmp_path, splits, monkeypatch):
    def explota(self, h_v, h_h):
        raise NonFiniteError('loss', "pérdida no finita")

    monkeypatch.setattr(Trainer, '_run_epoch', explota)
    with pytest.raises(TrainingDivergedError) as info:
        trainer.fit(*splits, _config(), _train_config(), out_dir=str(tmp_path), progress=False)
    assert info.value.checkpoint_path == str(tmp_path / 'last_good.ckpt')
    assert read_checkpoint(info.value.checkpoint_path).step == 0


def test_scaler_from_store_requires_meta(splits):
    store, _ = trainer.fit(*splits, _config(), _train_config(epochs=0), progress=False)
    scaler = trainer.scaler_from_store(store)
    assert scaler == chanlab.fit_normalizer(splits[0])
    store.meta.pop('scaler_lo')
    with pytest.raises(ConfigurationError):
        trainer.scaler_from_store(store)


def test_mi_eval_requires_two_samples(splits):
    t = Trainer(_config(), _train_config())
    h_v, h_h = _lote(splits[1])
    i_joint, i_pol = t.mi_eval(h_v, h_h)
    assert np.isfinite(i_joint) and np.isfinite(i_pol)
    with pytest.raises(BatchTooSmallError):
        t.mi_eval(h_v[:1], h_h[:1])


def test_sweeps_produce_one_row_per_setting(splits):
    cfg = _train_config(epochs=1)
    tabla = trainer.sweep_mi_targets(*splits, _config(), cfg, [0.0, 0.5])
    assert tabla['mi_target_bits'].tolist() == [0.0, 0.5]
    ext = trainer.sweep_extensions(*splits, _config(), cfg, depths=[1], widths=[1, 2])
    assert ext['width'].tolist() == [1, 2]
    assert ext['params_total'].iloc[1] > ext['params_total'].iloc[0]


# ---------------------------------------------------------------------------
# Verificación de gradientes
# ---------------------------------------------------------------------------

def test_gradcheck_passes_on_small_config():
    reporte = trainer.finite_diff_gradcheck(seed=0, max_entries=16)
    assert reporte.passed, reporte.failures
    assert set(reporte.groups()) == {'encoder', 'decoder', 'f1', 'f2'}
    assert reporte.unverified == []
    assert all(t.checked > 0 for t in reporte.tensors)


def test_gradcheck_detects_corrupted_gradient():
    reporte = trainer.finite_diff_gradcheck(seed=0, max_entries=4, corrupt='decoder_v.head.bias')
    assert not reporte.passed
    assert reporte.failures == ['decoder_v.head.bias']


def test_gradcheck_unknown_corrupt_name():
    with pytest.raises(ConfigurationError):
        trainer.finite_diff_gradcheck(max_entries=1, corrupt='no.existe')


def test_gradcheck_is_deterministic():
    a = trainer.finite_diff_gradcheck(seed=5, max_entries=4).to_frame()
    b = trainer.finite_diff_gradcheck(seed=5, max_entries=4).to_frame()
    pd.testing.assert_frame_equal(a, b)


def test_gradcheck_fails_tensors_without_checked_entries(monkeypatch):
    # cada evaluación reporta un patrón de activación distinto: todo es quiebre
    llamadas = {'n': 0}

    def siempre_quiebre(self, fn):
        llamadas['n'] += 1
        return fn(), [torch.tensor([llamadas['n'] % 2 == 0])]

    monkeypatch.setattr(trainer._KinkDetector, 'capture', siempre_quiebre)
    reporte = trainer.finite_diff_gradcheck(seed=0, max_entries=1)
    assert not reporte.passed
    assert set(reporte.unverified) == {t.name for t in reporte.tensors}
    assert all(t.checked == 0 and t.kinked > 0 for t in reporte.tensors)
