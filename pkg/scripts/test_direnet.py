import os
import sys
from fractions import Fraction

import numpy as np
import pytest
import torch

# Add parent to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core import direnet
from core.checkpoint import read_checkpoint, write_checkpoint
from core.direnet import AttentionBlock, DiReNet, LatentTriple, ParameterStore
from core.errors import CheckpointFormatError, ConfigurationError, DimensionError, NonFiniteError
from strict_models import ModelConfig


def _config(**overrides):
    campos = dict(n_s=8, n_t=8, sigma=4.0, conv_channels=4, depth=1, width=1)
    campos.update(overrides)
    return ModelConfig(**campos)


def _zero_(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def _maps(batch=3, n_s=8, width=4, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return (torch.rand(batch, 2, n_s, width, generator=gen),
            torch.rand(batch, 2, n_s, width, generator=gen))


# ---------------------------------------------------------------------------
# Aritmética de dimensiones
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n_s, n_t, sigma, esperado", [
    (32, 32, 8, 85),
    (32, 32, 64, 11),
    (24, 32, 8, 64),
    (15, 2, 8, 2),       # nominal 2.5: empate hacia abajo
])
def test_latent_length(n_s, n_t, sigma, esperado):
    assert direnet.latent_length(n_s, n_t, sigma) == esperado


def test_latent_length_zero_is_configuration_error():
    with pytest.raises(ConfigurationError):
        direnet.latent_length(1, 2, 8)


def test_sigma_must_exceed_one():
    with pytest.raises(ConfigurationError):
        direnet.latent_length(32, 32, 1)
    with pytest.raises(ValueError):
        ModelConfig(sigma=1.0)


def test_count_fc_params_reference_values():
    p0, p1, p2 = direnet.count_fc_params(32, 32, 8)
    assert p0 == 524288
    assert p1 == 262144
    assert p2 == Fraction(1048576, 3)


def test_count_fc_params_ratios_hold_exactly():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n_s = int(rng.integers(1, 65))
        n_t = 2 * int(rng.integers(1, 33))
        sigma = float(rng.choice([1.5, 2, 3, 4, 7.5, 8, 16, 32, 64, 100]))
        p0, p1, p2 = direnet.count_fc_params(n_s, n_t, sigma)
        assert p1 == p0 / 2
        assert p2 == 2 * p0 / 3


# ---------------------------------------------------------------------------
# Bloques
# ---------------------------------------------------------------------------

def _ie_block():
    return AttentionBlock(4, 4, (8, 4), 'ie', [3, 5, 7], 0.3, 3, name='prueba.ie')


def _ir_block():
    return AttentionBlock(2, 4, (8, 4), 'ir', [3, 5, 7], 0.3, 3, name='prueba.ir')


def test_ie_block_shape_and_determinism():
    bloque = direnet.init_module_(_ie_block(), torch.Generator().manual_seed(1)).eval()
    x = torch.rand(2, 4, 8, 4, generator=torch.Generator().manual_seed(2))
    with torch.no_grad():
        a, b = bloque(x), bloque(x)
    assert a.shape == (2, 2, 8, 4)
    assert torch.equal(a, b)


def test_ie_block_zero_params_gives_zero():
    bloque = _zero_(_ie_block()).eval()
    with torch.no_grad():
        out = bloque(torch.rand(2, 4, 8, 4))
    assert torch.count_nonzero(out) == 0


def test_ir_block_zero_params_is_identity():
    bloque = _zero_(_ir_block()).eval()
    x = torch.rand(2, 2, 8, 4)
    with torch.no_grad():
        assert torch.equal(bloque(x), x)


def test_block_shape_mismatch_names_layer():
    with pytest.raises(DimensionError, match="prueba.ie"):
        _ie_block()(torch.rand(2, 2, 8, 4))


# ---------------------------------------------------------------------------
# Encoder / decoder
# ---------------------------------------------------------------------------

def test_fc_input_lengths_reference_geometry():
    with torch.device('meta'):
        modelo = DiReNet(ModelConfig(n_s=32, n_t=32, sigma=8))
    for fc in (modelo.encoder.fc_w, modelo.encoder.fc_v, modelo.encoder.fc_h):
        assert fc.in_features == 1024
        assert fc.out_features == 85
    assert modelo.decoder_v.fc.in_features == 2 * 85
    assert modelo.decoder_h.fc.out_features == 1024


def test_end_to_end_shapes_and_range():
    cfg = _config()
    modelo = direnet.build_model(cfg, seed=0).eval()
    h_v, h_h = _maps()
    with torch.no_grad():
        hat_v, hat_h, enc = modelo(h_v, h_h)
    assert hat_v.shape == h_v.shape and hat_h.shape == h_h.shape
    assert enc.w.shape == (3, 2, 8, 4)
    for z in enc.latent:
        assert z.shape == (3, cfg.latent_len)
    assert float(hat_v.min()) >= 0.0 and float(hat_v.max()) <= 1.0


def test_swapped_inputs_change_shared_latent():
    modelo = direnet.build_model(_config(), seed=3).eval()
    h_v, h_h = _maps(seed=4)
    with torch.no_grad():
        a = modelo.encode(h_v, h_h).latent.z_w
        b = modelo.encode(h_h, h_v).latent.z_w
    assert not torch.allclose(a, b)


def test_zeroed_fc_weights_give_bias_latents():
    modelo = direnet.build_model(_config(), seed=0).eval()
    with torch.no_grad():
        for i, fc in enumerate((modelo.encoder.fc_w, modelo.encoder.fc_v, modelo.encoder.fc_h)):
            fc.weight.zero_()
            fc.bias.fill_(float(i + 1))
        latente = modelo.encode(*_maps()).latent
    for i, z in enumerate(latente):
        assert torch.equal(z, torch.full_like(z, float(i + 1)))


def test_decoder_with_identity_trunk_matches_hand_evaluation():
    cfg = _config()
    modelo = direnet.build_model(cfg, seed=5).eval()
    _zero_(modelo.decoder_v.paths)
    gen = torch.Generator().manual_seed(6)
    z = LatentTriple(*(torch.randn(2, cfg.latent_len, generator=gen) for _ in range(3)))
    with torch.no_grad():
        hat_v, _ = modelo.decode(z)
        x = modelo.decoder_v.fc(torch.cat([z.z_v, z.z_w], dim=-1)).view(-1, 2, 8, 4)
        esperado = torch.sigmoid(modelo.decoder_v.head(x))
    assert torch.allclose(hat_v, esperado, atol=1e-6)


def test_non_finite_activation_names_layer():
    modelo = direnet.build_model(_config(), seed=0).eval()
    h_v, h_h = _maps()
    h_v[0, 0, 0, 0] = float('nan')
    with torch.no_grad(), pytest.raises(NonFiniteError) as info:
        modelo(h_v, h_h)
    assert info.value.layer == 'encoder.sa'


def test_decoder_rejects_wrong_latent_length():
    modelo = direnet.build_model(_config(), seed=0).eval()
    malo = torch.zeros(1, 3)
    with pytest.raises(DimensionError, match="decoder_v.fc"):
        modelo.decode(LatentTriple(malo, malo, malo))


# ---------------------------------------------------------------------------
# Inicialización y conteo de parámetros
# ---------------------------------------------------------------------------

def test_init_params_deterministic_per_seed():
    a = direnet.init_params(_config(), seed=10)
    b = direnet.init_params(_config(), seed=10)
    c = direnet.init_params(_config(), seed=11)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_init_params_biases_and_norm_scales():
    store = direnet.init_params(_config(), seed=0)
    for nombre, t in store.params.items():
        if nombre.endswith('bn.weight'):
            assert torch.all(t == 1.0)
        elif nombre.endswith('bias'):
            assert torch.all(t == 0.0)


def test_count_params_actual_matches_store():
    cfg = _config()
    cuenta = direnet.count_params_actual(cfg)
    assert cuenta.total == direnet.init_params(cfg, seed=0).element_count()
    m, flat = cfg.latent_len, cfg.n_s * cfg.n_t
    assert cuenta.encoder_fc_weights == 3 * flat * m
    assert cuenta.decoder_fc_weights == 2 * (2 * m) * flat


def test_doubling_width_changes_only_trunk():
    a = direnet.count_params_actual(_config(width=2))
    b = direnet.count_params_actual(_config(width=4))
    assert b.decoder_trunk == 2 * a.decoder_trunk
    for campo in ('encoder_fc', 'decoder_fc', 'encoder_conv', 'decoder_head'):
        assert getattr(a, campo) == getattr(b, campo)


def test_sigma_does_not_change_conv_counts():
    a = direnet.count_params_actual(_config(sigma=4.0))
    b = direnet.count_params_actual(_config(sigma=16.0))
    assert a.conv == b.conv
    assert a.encoder_fc > b.encoder_fc


@pytest.mark.parametrize("nombre, grupo", [
    ('encoder.sa.lift.conv.weight', 'encoder'),
    ('decoder_h.fc.bias', 'decoder'),
    ('mi.f1.x_proj.weight', 'f1'),
    ('mi.f2.p_mu.0.bias', 'f2'),
])
def test_parameter_group(nombre, grupo):
    assert direnet.parameter_group(nombre) == grupo


# ---------------------------------------------------------------------------
# Inferencia por lotes y checkpoints
# ---------------------------------------------------------------------------

def test_array_helpers_restore_mode_and_match_forward():
    modelo = direnet.build_model(_config(), seed=0)
    modelo.train()
    h_v, h_h = _maps(batch=5)
    hat_v, hat_h = direnet.reconstruct_arrays(modelo, h_v.numpy(), h_h.numpy(), batch_size=2)
    assert modelo.training
    modelo.eval()
    with torch.no_grad():
        ref_v, ref_h, _ = modelo(h_v, h_h)
    np.testing.assert_allclose(hat_v, ref_v.numpy(), atol=1e-6)
    np.testing.assert_allclose(hat_h, ref_h.numpy(), atol=1e-6)


def test_checkpoint_roundtrip(tmp_path):
    cfg = _config(branch_kernels=[3, 5])
    modelo = direnet.build_model(cfg, seed=2)
    modelo.train()
    with torch.no_grad():
        modelo(*_maps())        # mueve las estadísticas de BN
    store = ParameterStore.from_module(modelo, cfg, seed=2, step=17, meta={'scaler_lo': '-1.5'})
    store.extra = {'mi.f1.x_proj.weight': torch.randn(3, 4)}
    ruta = write_checkpoint(store, str(tmp_path / 'm.ckpt'))

    leido = read_checkpoint(ruta)
    assert leido.config == cfg
    assert (leido.seed, leido.step) == (2, 17)
    assert leido.meta == {'scaler_lo': '-1.5'}
    assert leido.digest() == store.digest()
    for nombre, t in store.buffers.items():
        assert torch.equal(leido.buffers[nombre], t)
    assert torch.equal(leido.extra['mi.f1.x_proj.weight'], store.extra['mi.f1.x_proj.weight'])

    reconstruido = leido.build().eval()
    modelo.eval()
    h_v, h_h = _maps(seed=8)
    with torch.no_grad():
        assert torch.equal(reconstruido(h_v, h_h)[0], modelo(h_v, h_h)[0])


def test_checkpoint_bad_magic(tmp_path):
    ruta = tmp_path / 'malo.ckpt'
    ruta.write_bytes(b"NOTACKPT" + b"\0" * 16)
    with pytest.raises(CheckpointFormatError):
        read_checkpoint(str(ruta))


def test_checkpoint_truncated(tmp_path):
    store = direnet.init_params(_config(), seed=0)
    ruta = write_checkpoint(store, str(tmp_path / 'm.ckpt'))
    with open(ruta, 'rb') as f:
        raw = f.read()
    with open(ruta, 'wb') as f:
        f.write(raw[:len(raw) // 2])
    with pytest.raises(CheckpointFormatError):
        read_checkpoint(ruta)
