import os
import sys
from fractions import Fraction

import numpy as np
import pytest
import torch

# Add parent to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core import direnet, quant
from core.direnet import LatentTriple
from core.errors import ConfigurationError, CsiDomainError, FeedbackFormatError
from strict_models import ModelConfig, QuantConfig


# ---------------------------------------------------------------------------
# Contabilidad de bits
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("sigma, q_sa, q_sp, esperado", [
    (8, 3, 3, 768), (16, 3, 3, 384), (32, 3, 3, 192), (64, 3, 3, 96),
    (8, 4, 4, 1024), (16, 4, 4, 512), (32, 4, 4, 256), (64, 4, 4, 128),
    (8, 2, 5, 1024), (8, 6, 3, 1024),
])
def test_feedback_bits_reference_table(sigma, q_sa, q_sp, esperado):
    assert quant.feedback_bits(32, 32, sigma, q_sa, q_sp) == esperado


def test_actual_bits_use_integer_latent_length():
    assert quant.actual_bits(85, 3, 3) == 765
    assert quant.actual_bits(11, 3, 3) == 99
    rep = quant.bit_report(32, 32, 8, direnet.latent_length(32, 32, 8), 3, 3)
    assert (rep.nominal, rep.actual) == (768, 765)


def test_nominal_and_actual_bits_stay_close():
    rng = np.random.default_rng(1)
    for _ in range(40):
        n_s = int(rng.integers(2, 65))
        n_t = 2 * int(rng.integers(1, 33))
        sigma = float(rng.choice([2, 4, 8, 16]))
        q_sa, q_sp = (int(x) for x in rng.integers(1, 9, size=2))
        try:
            m = direnet.latent_length(n_s, n_t, sigma)
        except ConfigurationError:
            continue
        rep = quant.bit_report(n_s, n_t, sigma, m, q_sa, q_sp)
        assert abs(rep.nominal - rep.actual) < q_sa + 2 * q_sp


def test_equal_budget_pairs_keep_budget():
    pares = quant.equal_budget_pairs(3, 3)
    assert (3, 3) in pares and (5, 2) in pares and (1, 4) in pares
    for q_sa, q_sp in pares:
        assert q_sa + 2 * q_sp == 9
        assert quant.feedback_bits(32, 32, 8, q_sa, q_sp) == 768


def test_format_fraction():
    assert quant.format_fraction(Fraction(768)) == "768"
    assert quant.format_fraction(Fraction(1048576, 3)) == "1048576/3 (≈349525.3333)"


def test_bit_table_columns():
    tabla = quant.bit_table(32, 32, [8, 64], [(3, 3), (4, 4)])
    assert list(tabla.columns) == ['sigma', 'q_sa', 'q_sp', 'latent_len', 'nominal_bits', 'actual_bits']
    assert tabla['nominal_bits'].tolist() == ['768', '1024', '96', '128']
    assert tabla['actual_bits'].tolist() == [765, 1020, 99, 132]


# ---------------------------------------------------------------------------
# Cuantizador escalar
# ---------------------------------------------------------------------------

def test_quantize_endpoints_and_rounding():
    assert quant.quantize(0.0, 3, (0.0, 1.0)) == 0
    assert quant.quantize(1.0, 3, (0.0, 1.0)) == 7
    assert quant.quantize(0.34, 2, (0.0, 1.0)) == 1
    assert quant.dequantize(1, 2, (0.0, 1.0)) == pytest.approx(1 / 3)


def test_quantize_clamps_out_of_range():
    codes = quant.quantize(np.array([-5.0, 5.0]), 4, (-1.0, 1.0))
    assert codes.tolist() == [0, 15]


@pytest.mark.parametrize("bits", [1, 3, 8, 16])
def test_roundtrip_error_bound(bits):
    rango = (-2.0, 3.0)
    v = np.random.default_rng(bits).uniform(*rango, size=500)
    recuperado = quant.dequantize(quant.quantize(v, bits, rango), bits, rango)
    assert np.max(np.abs(recuperado - v)) <= quant.roundtrip_bound(bits, rango) + 1e-12


def test_quantize_is_monotone():
    v = np.linspace(-1.5, 1.5, 301)
    codes = quant.quantize(v, 5, (-1.0, 1.0))
    assert np.all(np.diff(codes.astype(np.int64)) >= 0)


@pytest.mark.parametrize("bits, rango", [(0, (0.0, 1.0)), (17, (0.0, 1.0)), (4, (1.0, 1.0))])
def test_quantize_rejects_bad_arguments(bits, rango):
    with pytest.raises(CsiDomainError):
        quant.quantize(0.5, bits, rango)


# ---------------------------------------------------------------------------
# Rangos y empaquetado
# ---------------------------------------------------------------------------

def _latente():
    return LatentTriple(np.array([[0.0, 1.0], [2.0, 3.0]]),
                        np.full((2, 2), 5.0),
                        np.array([[-1.0, 1.0], [0.0, 0.5]]))


def test_fit_ranges_margin():
    rangos = quant.fit_ranges(_latente(), margin=0.01)
    assert rangos['z_w'] == pytest.approx((-0.03, 3.03))
    # flujo constante: el margen se toma sobre la magnitud
    assert rangos['z_v'] == pytest.approx((4.95, 5.05))
    assert rangos['z_h'] == pytest.approx((-1.02, 1.02))


def test_ranges_meta_roundtrip():
    rangos = quant.fit_ranges(_latente())
    meta = quant.ranges_to_meta(rangos)
    assert set(meta) == {'quant_z_w', 'quant_z_v', 'quant_z_h'}
    assert quant.ranges_from_meta(meta) == rangos
    meta.pop('quant_z_h')
    assert quant.ranges_from_meta(meta) is None


def test_quantize_latent_requires_ranges():
    with pytest.raises(CsiDomainError):
        quant.quantize_latent(_latente(), QuantConfig())


def test_latent_uses_per_stream_bits():
    cfg = QuantConfig(q_sa=2, q_sp=5, ranges=quant.fit_ranges(_latente()))
    codes = quant.quantize_latent(_latente(), cfg)
    assert codes['z_w'].max() <= 3
    assert codes['z_h'].max() <= 31
    recuperado = quant.dequantize_latent(codes, cfg)
    for nombre, z, z_hat in zip(('z_w', 'z_v', 'z_h'), _latente(), recuperado):
        assert np.max(np.abs(z_hat - z)) <= quant.roundtrip_bound(cfg.bits_for(nombre), cfg.ranges[nombre]) + 1e-6


def test_pack_stream_layout():
    codes = np.random.default_rng(3).integers(0, 32, size=13).astype(np.uint32)
    data = quant.pack_stream(codes, 5, (-1.0, 2.0))
    assert len(data) == quant.STREAM_HEADER.size + 9
    leidos, bits, rango, usados = quant.unpack_stream(data, 13)
    assert np.array_equal(leidos, codes)
    assert (bits, rango, usados) == (5, (-1.0, 2.0), len(data))


def test_unpack_stream_rejects_truncated_payload():
    data = quant.pack_stream(np.arange(13, dtype=np.uint32) % 32, 5, (-1.0, 2.0))
    with pytest.raises(FeedbackFormatError):
        quant.unpack_stream(data[:-1], 13)
    with pytest.raises(FeedbackFormatError):
        quant.unpack_stream(data[:quant.STREAM_HEADER.size - 1], 13)
    with pytest.raises(FeedbackFormatError):
        quant.unpack_stream(bytes([0]) + data[1:], 13)


def test_pack_feedback_sample():
    cfg = QuantConfig(q_sa=3, q_sp=7, ranges=quant.fit_ranges(_latente()))
    codes = {n: c[0] for n, c in quant.quantize_latent(_latente(), cfg).items()}
    data = quant.pack_feedback(codes, cfg)
    leidos = quant.unpack_feedback(data, 2)
    for nombre in codes:
        assert np.array_equal(leidos[nombre], codes[nombre])


# ---------------------------------------------------------------------------
# Inferencia cuantizada
# ---------------------------------------------------------------------------

def test_quantized_inference_converges_with_many_bits():
    cfg = ModelConfig(n_s=8, n_t=8, sigma=4.0, conv_channels=4, depth=1, width=1)
    modelo = direnet.build_model(cfg, seed=0)
    gen = torch.Generator().manual_seed(1)
    h_v = torch.rand(6, 2, 8, 4, generator=gen).numpy()
    h_h = torch.rand(6, 2, 8, 4, generator=gen).numpy()
    rangos = quant.fit_ranges(direnet.encode_arrays(modelo, h_v, h_h))
    ref_v, ref_h = direnet.reconstruct_arrays(modelo, h_v, h_h)

    fino = quant.quantized_inference(modelo, h_v, h_h, QuantConfig(q_sa=16, q_sp=16, ranges=rangos))
    np.testing.assert_allclose(fino.hat_v, ref_v, atol=1e-3)
    np.testing.assert_allclose(fino.hat_h, ref_h, atol=1e-3)
    assert fino.bits.actual == cfg.latent_len * 48

    grueso = quant.quantized_inference(modelo, h_v, h_h, QuantConfig(q_sa=1, q_sp=1, ranges=rangos))
    error_fino = np.abs(fino.hat_v - ref_v).mean()
    error_grueso = np.abs(grueso.hat_v - ref_v).mean()
    assert error_grueso > error_fino


def test_uneven_split_refines_shared_stream():
    # la grilla de 6 bits contiene a la de 3 bits (63 = 9·7): el error de z_w no puede crecer
    rng = np.random.default_rng(11)
    latente = LatentTriple(*(rng.standard_normal((40, 8)) for _ in range(3)))
    rangos = quant.fit_ranges(latente)
    errores = {}
    for par in ((3, 3), (6, 3)):
        cfg = QuantConfig(q_sa=par[0], q_sp=par[1], ranges=rangos)
        recuperado = quant.dequantize_latent(quant.quantize_latent(latente, cfg), cfg)
        errores[par] = [np.abs(z_hat - z) for z, z_hat in zip(latente, recuperado)]
    assert np.all(errores[(6, 3)][0] <= errores[(3, 3)][0] + 1e-6)
    assert np.mean(errores[(6, 3)][0]) < np.mean(errores[(3, 3)][0])
    for especifico in (1, 2):
        np.testing.assert_array_equal(errores[(6, 3)][especifico], errores[(3, 3)][especifico])
    bits_33 = quant.actual_bits(8, 3, 3)
    assert quant.actual_bits(8, 6, 3) == bits_33 + 8 * 3
