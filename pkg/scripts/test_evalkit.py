import os
import sys

import numpy as np
import pandas as pd
import pytest

# Add parent to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core import chanlab, evalkit
from core.errors import CsiDomainError, DimensionError
from strict_models import ScenarioConfig
from utils.config_file import parse_kv_text


def _complejo(forma, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(forma) + 1j * rng.standard_normal(forma)


@pytest.fixture(scope='module')
def dataset():
    return chanlab.generate_dataset(ScenarioConfig.from_preset('cdl-a'), 50, 4, 4, seed=21)


# ---------------------------------------------------------------------------
# NMSE y CDF
# ---------------------------------------------------------------------------

def test_nmse_reference_values():
    h_v, h_h = _complejo((4, 3, 2), 0), _complejo((4, 3, 2), 1)
    assert evalkit.nmse_db(h_v, h_h, h_v, h_h) == evalkit.settings.NMSE_FLOOR_DB
    assert evalkit.nmse_db(np.zeros_like(h_v), np.zeros_like(h_h), h_v, h_h) == pytest.approx(0.0)
    assert evalkit.nmse_db(0.9 * h_v, 0.9 * h_h, h_v, h_h) == pytest.approx(-20.0)


def test_nmse_is_scale_invariant():
    h_v, h_h = _complejo((4, 3, 2), 2), _complejo((4, 3, 2), 3)
    hat_v, hat_h = h_v + 0.1 * _complejo((4, 3, 2), 4), h_h + 0.1 * _complejo((4, 3, 2), 5)
    base = evalkit.nmse_per_sample(hat_v, hat_h, h_v, h_h)
    escalado = evalkit.nmse_per_sample(7.0 * hat_v, 7.0 * hat_h, 7.0 * h_v, 7.0 * h_h)
    np.testing.assert_allclose(base, escalado, rtol=1e-12)


def test_nmse_averages_the_two_polarizations():
    h_v, h_h = _complejo((2, 3, 2), 6), _complejo((2, 3, 2), 7)
    por_muestra = evalkit.nmse_per_sample(h_v, np.zeros_like(h_h), h_v, h_h)
    np.testing.assert_allclose(por_muestra, [0.5, 0.5])


def test_nmse_rejects_zero_channel_and_shape_mismatch():
    h = _complejo((2, 3, 2), 8)
    cero = h.copy()
    cero[1] = 0
    with pytest.raises(CsiDomainError):
        evalkit.nmse_per_sample(h, h, cero, h)
    with pytest.raises(DimensionError):
        evalkit.nmse_per_sample(h[:1], h, h, h)


def test_cdf_single_sample():
    cdf = evalkit.nmse_cdf([-12.5])
    assert cdf['value'].tolist() == [-12.5]
    assert cdf['fraction'].tolist() == [1.0]


def test_cdf_collapses_duplicates():
    cdf = evalkit.nmse_cdf([-3.0, -1.0, -3.0])
    assert cdf['value'].tolist() == [-3.0, -1.0]
    assert cdf['fraction'].tolist() == pytest.approx([2 / 3, 1.0])


def test_cdf_is_monotone_and_quantiles():
    valores = np.random.default_rng(9).normal(-10.0, 3.0, size=200)
    cdf = evalkit.nmse_cdf(valores)
    assert np.all(np.diff(cdf['fraction'].to_numpy()) > 0)
    assert cdf['fraction'].iloc[-1] == 1.0
    assert evalkit.cdf_quantile(evalkit.nmse_cdf([1.0, 2.0, 3.0, 4.0]), 0.5) == 2.0
    with pytest.raises(CsiDomainError):
        evalkit.nmse_cdf([])


# ---------------------------------------------------------------------------
# Ablaciones
# ---------------------------------------------------------------------------

def test_dr_mp_exact_for_equal_magnitudes():
    h_v = _complejo((3, 4, 2), 10)
    h_h = np.abs(h_v) * np.exp(1j * np.random.default_rng(11).uniform(0, 2 * np.pi, h_v.shape))
    rec_v, rec_h = evalkit.dr_mp_inverse(evalkit.dr_mp_transform(h_v, h_h))
    np.testing.assert_allclose(rec_v, h_v, atol=1e-12)
    np.testing.assert_allclose(rec_h, h_h, atol=1e-12)


def test_dr_mp_keeps_phases_and_bounds_magnitude():
    h_v, h_h = _complejo((3, 4, 2), 12), _complejo((3, 4, 2), 13)
    code = evalkit.dr_mp_transform(h_v, h_h)
    rec_v, rec_h = evalkit.dr_mp_inverse(code)
    np.testing.assert_allclose(np.angle(rec_v), np.angle(h_v), atol=1e-12)
    menor = np.minimum(np.abs(h_v), np.abs(h_h))
    mayor = np.maximum(np.abs(h_v), np.abs(h_h))
    assert np.all(code.shared >= menor - 1e-12) and np.all(code.shared <= mayor + 1e-12)


def test_dr_as_roundtrip_is_exact():
    h_v, h_h = _complejo((3, 4, 2), 14), _complejo((3, 4, 2), 15)
    rec_v, rec_h = evalkit.dr_as_inverse(evalkit.dr_as_transform(h_v, h_h))
    assert np.array_equal(rec_v, h_v)
    assert np.array_equal(rec_h, h_h)


def test_dr_as_sign_of_zero_is_positive():
    h = np.array([[[0.0 - 2.0j]]])
    code = evalkit.dr_as_transform(h, h)
    assert code.sign_v[0, 0, 0, 0] == 1.0     # parte real nula
    assert code.sign_v[0, 1, 0, 0] == -1.0


def test_dr_as_shared_from_single_polarization():
    h_v, h_h = _complejo((2, 3, 2), 16), _complejo((2, 3, 2), 17)
    code = evalkit.dr_as_transform(h_v, h_h)
    rec_v, rec_h = evalkit.dr_as_inverse(code, shared_from='v')
    np.testing.assert_allclose(rec_v, h_v)
    np.testing.assert_allclose(np.abs(rec_h.real), np.abs(h_v.real))
    with pytest.raises(CsiDomainError):
        evalkit.dr_as_inverse(code, shared_from='x')


def test_ablation_report(dataset):
    tabla = evalkit.ablation_report(dataset)
    assert tabla['ablation'].tolist() == ['dr-mp', 'dr-as', 'dr-as-roundtrip']
    filas = dict(zip(tabla['ablation'], tabla['nmse_db']))
    assert filas['dr-as-roundtrip'] == evalkit.settings.NMSE_FLOOR_DB
    assert filas['dr-mp'] < 0.0


# ---------------------------------------------------------------------------
# Línea base lineal
# ---------------------------------------------------------------------------

def test_linear_baseline_lossless_at_full_rank(dataset):
    base = evalkit.LinearBaseline.fit(dataset, rank=dataset.n_s * dataset.n_t)
    assert base.rank == 16
    assert base.retained == 32
    assert base.nmse_db(dataset) < -100.0


def _error_relativo(hat, h):
    return np.sum(np.abs(hat - h) ** 2, axis=(1, 2)) / np.sum(np.abs(h) ** 2, axis=(1, 2))


def test_linear_baseline_improves_with_rank(dataset):
    errores, por_pol = [], []
    for rango in (1, 2, 4, 8, 16):
        base = evalkit.LinearBaseline.fit(dataset, rank=rango)
        hat_v, hat_h = base.reconstruct(dataset)
        errores.append(evalkit.nmse_per_sample(hat_v, hat_h, dataset.h_v, dataset.h_h))
        por_pol.append((_error_relativo(hat_v, dataset.h_v), _error_relativo(hat_h, dataset.h_h)))
    for previo, siguiente in zip(errores, errores[1:]):
        assert np.all(siguiente <= previo + 1e-9)
    for (v0, h0), (v1, h1) in zip(por_pol, por_pol[1:]):
        assert np.all(v1 <= v0 + 1e-9)
        assert np.all(h1 <= h0 + 1e-9)


def test_linear_baseline_bases_are_per_polarization(dataset):
    base = evalkit.LinearBaseline.fit(dataset, rank=3)
    assert base.basis_v.shape == (3, dataset.n_s * dataset.n_t)
    assert base.basis_h.shape == (3, dataset.n_s * dataset.n_t)
    coeffs = base.encode(dataset.h_v, dataset.h_h)
    assert coeffs.shape == (len(dataset), 6)
    # anular h no altera la reconstrucción de v
    solo_v = coeffs.copy()
    solo_v[:, 3:] = 0.0
    np.testing.assert_allclose(base.decode(solo_v)[0], base.decode(coeffs)[0])


def test_linear_baseline_rank_from_sigma(dataset):
    base = evalkit.LinearBaseline.fit(dataset, sigma=4.0)
    assert base.rank == 4
    assert base.retained == 8
    with pytest.raises(CsiDomainError):
        evalkit.LinearBaseline.fit(dataset)


# ---------------------------------------------------------------------------
# ZF y tasa
# ---------------------------------------------------------------------------

def test_zf_cancels_interference():
    users = _complejo((3, 6), 20)
    zf = evalkit.zf_precode(users)
    assert not zf.regularized
    assert evalkit.interference_ratio(users, zf.v) <= 1e-8
    np.testing.assert_allclose(np.linalg.norm(zf.v, axis=0), np.ones(3))


def test_zf_single_user_is_matched_filter():
    users = _complejo((1, 4), 21)
    v = evalkit.zf_precode(users).v[:, 0]
    np.testing.assert_allclose(v, users[0] / np.linalg.norm(users[0]), atol=1e-12)


def test_zf_orthogonal_users():
    users = np.eye(2, dtype=np.complex128)
    zf = evalkit.zf_precode(users)
    np.testing.assert_allclose(zf.v, np.eye(2), atol=1e-12)
    assert evalkit.interference_ratio(users, zf.v) == 0.0


def test_zf_batched_and_singular():
    lote = _complejo((5, 2, 4), 22)
    assert evalkit.zf_precode(lote).v.shape == (5, 4, 2)
    repetido = np.stack([lote[0, 0], lote[0, 0]])
    assert evalkit.zf_precode(repetido).regularized
    with pytest.raises(DimensionError):
        evalkit.zf_precode(_complejo((3, 2), 23))


def test_rate_zero_channel_is_zero():
    users = np.zeros((2, 4), dtype=np.complex128)
    v = evalkit.zf_precode(_complejo((2, 4), 24)).v
    assert np.all(evalkit.achievable_rate(users, v, [0.0, 20.0]) == 0.0)


def test_rate_high_snr_slope():
    users = _complejo((2, 6), 25)
    v = evalkit.zf_precode(users).v
    tasas = evalkit.achievable_rate(users, v, [40.0, 50.0])
    assert tasas.shape == (2, 2)
    np.testing.assert_allclose(tasas[1] - tasas[0], np.log2(10.0), atol=1e-2)


def test_rate_table_perfect_equals_recovered_for_exact_csi(dataset):
    tabla = evalkit.rate_table(dataset, dataset.h_v, dataset.h_h, users=2, trials=5,
                               snr_grid_db=[0.0, 10.0], seed=3)
    assert list(tabla.columns) == ['snr_db', 'rate_perfect', 'rate_recovered',
                                   'zf_regularized_perfect', 'zf_regularized_recovered']
    np.testing.assert_array_equal(tabla['zf_regularized_perfect'], tabla['zf_regularized_recovered'])
    np.testing.assert_allclose(tabla['rate_perfect'], tabla['rate_recovered'])
    assert tabla['rate_perfect'].iloc[1] > tabla['rate_perfect'].iloc[0]
    with pytest.raises(CsiDomainError):
        evalkit.rate_table(dataset.subset([0]), dataset.h_v[:1], dataset.h_h[:1], users=2)


def test_rate_table_counts_regularized_trials(dataset):
    # todas las muestras recuperadas iguales: la Gram de los usuarios es singular
    hat_v = np.repeat(dataset.h_v[:1], len(dataset), axis=0)
    hat_h = np.repeat(dataset.h_h[:1], len(dataset), axis=0)
    tabla = evalkit.rate_table(dataset, hat_v, hat_h, users=2, trials=4, snr_grid_db=[0.0, 10.0], seed=3)
    assert list(tabla['zf_regularized_recovered']) == [4, 4]
    assert tabla.attrs['regularized_trials'] == 4


# ---------------------------------------------------------------------------
# Reporte
# ---------------------------------------------------------------------------

def test_emit_report_writes_tables(tmp_path, dataset):
    reporte = evalkit.EvalReport.from_nmse(np.array([0.01, 0.1, 0.001]),
                                           gcs=chanlab.gcs_summary(dataset),
                                           params={'encoder': 10, 'decoder': 20},
                                           summary={'scenario': 'cdl-a'})
    rutas = evalkit.emit_report(reporte, str(tmp_path))
    for nombre in ('nmse_per_sample.csv', 'nmse_cdf.csv', 'gcs_summary.csv', 'params.csv', 'summary.txt'):
        assert (tmp_path / nombre).exists()
    assert 'rate' not in rutas and not (tmp_path / 'rate.csv').exists()

    por_muestra = pd.read_csv(tmp_path / 'nmse_per_sample.csv')
    assert por_muestra['nmse_db'].tolist() == pytest.approx([-20.0, -10.0, -30.0])
    resumen = parse_kv_text((tmp_path / 'summary.txt').read_text(encoding='utf-8'))
    assert float(resumen['nmse_db']) == pytest.approx(10 * np.log10(0.037))
    assert float(resumen['nmse_median_db']) == pytest.approx(-20.0)
    assert resumen['scenario'] == 'cdl-a'
    assert len(pd.read_csv(tmp_path / 'gcs_summary.csv')) == 5
