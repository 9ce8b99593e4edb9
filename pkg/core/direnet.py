"""
Arquitectura DiReNet (PyTorch) y contabilidad exacta de parámetros.

Encoder: módulo SA (bloque IE sobre [h_v, h_h]) → W → FC → z_w; módulos SP
(bloque IE sobre [h_pol, W]) → U_pol → FC propia → z_pol.
Decoder por polarización: FC(2M → N_sN_t) → Wd caminos de D bloques IR →
suma → conv 1x1 → sigmoide.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, NamedTuple, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from config import settings
from core.errors import ConfigurationError, DimensionError, NonFiniteError

logger = logging.getLogger(__name__)

Number = Union[int, float, Fraction]


# ---------------------------------------------------------------------------
# Aritmética de dimensiones
# ---------------------------------------------------------------------------

def _fraccion(x: Number) -> Fraction:
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    return Fraction(str(x))


def nominal_latent_length(n_s: int, n_t: int, sigma: Number) -> Fraction:
    """Longitud nominal por flujo 2·n_s·n_t/(3σ), posiblemente fraccionaria."""
    s = _fraccion(sigma)
    if s <= 1:
        raise ConfigurationError(f"La relación de compresión debe ser > 1, recibido {sigma}")
    return Fraction(2 * n_s * n_t) / (3 * s)


def latent_length(n_s: int, n_t: int, sigma: Number) -> int:
    """
    M = round(2·n_s·n_t/(3σ)), empates hacia abajo.

    Ejemplos: (32, 32, 8) → 85; (32, 32, 64) → 11; (24, 32, 8) → 64
    """
    nominal = nominal_latent_length(n_s, n_t, sigma)
    m = math.ceil(nominal - Fraction(1, 2))
    if m < 1:
        raise ConfigurationError(f"Longitud latente nula para n_s={n_s}, n_t={n_t}, σ={sigma}")
    return m


def count_fc_params(n_s: int, n_t: int, sigma: Number) -> Tuple[Fraction, Fraction, Fraction]:
    """
    Pesos FC (sin sesgos) con longitudes nominales, en aritmética racional.

    Returns:
        (P0 marco típico, P1 encoder con tres FC, P2 decoder con dos FC)
    """
    s = _fraccion(sigma)
    if s <= 1:
        raise ConfigurationError(f"La relación de compresión debe ser > 1, recibido {sigma}")
    entrada = Fraction(n_s * n_t)
    # marco típico: una FC de 2·n_s·n_t a 2·n_s·n_t/σ
    p0 = (2 * entrada) * (2 * entrada / s)
    flujo = 2 * entrada / (3 * s)
    p1 = 3 * entrada * flujo
    p2 = 2 * (2 * flujo) * entrada
    return p0, p1, p2


# ---------------------------------------------------------------------------
# Bloques
# ---------------------------------------------------------------------------

class LatentTriple(NamedTuple):
    z_w: torch.Tensor
    z_v: torch.Tensor
    z_h: torch.Tensor


class EncoderOutput(NamedTuple):
    w: torch.Tensor
    u_v: torch.Tensor
    u_h: torch.Tensor
    latent: LatentTriple


def _check_finite(name: str, t: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NonFiniteError(name)
    return t


class CompositeConv(nn.Module):
    """conv → batch norm → LeakyReLU"""

    def __init__(self, in_ch: int, out_ch: int, kernel: Tuple[int, int], slope: float):
        super().__init__()
        padding = (kernel[0] // 2, kernel[1] // 2)
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=kernel, padding=padding, bias=True)
        self.bn = nn.BatchNorm2d(out_ch, momentum=settings.BN_MOMENTUM, eps=settings.BN_EPS)
        self.act = nn.LeakyReLU(negative_slope=slope)

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))


class AttentionBlock(nn.Module):
    """
    Bloque de atención convolucional multi-escala.

    kind='ie': ramas con kernels separables (1×k luego k×1), sin atajo.
    kind='ir': ramas k×k luego k×k y atajo identidad de la entrada.

    out = Conv1x1(x) ⊙ mask(Σ_i rama_i(lift(x))) [+ x]
    """

    def __init__(self, in_ch: int, channels: int, grid: Tuple[int, int], kind: str,
                 kernels: Iterable[int], slope: float, lift_kernel: int, name: str = 'block'):
        super().__init__()
        if kind not in ('ie', 'ir'):
            raise ValueError(f"Tipo de bloque desconocido: {kind}")
        self.kind = kind
        self.in_ch = in_ch
        self.grid = tuple(grid)
        self.name = name
        self.lift = CompositeConv(in_ch, channels, (lift_kernel, lift_kernel), slope)
        ramas = []
        for k in kernels:
            primero, segundo = ((1, k), (k, 1)) if kind == 'ie' else ((k, k), (k, k))
            ramas.append(nn.Sequential(
                CompositeConv(channels, channels, primero, slope),
                CompositeConv(channels, channels, segundo, slope),
            ))
        # la rama 0 (identidad) no tiene parámetros
        self.branches = nn.ModuleList(ramas)
        self.mask = CompositeConv(channels, 2, (1, 1), slope)
        self.project = nn.Conv2d(in_ch, 2, kernel_size=1, bias=True)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.in_ch or tuple(x.shape[2:]) != self.grid:
            raise DimensionError(
                f"{self.name}: entrada {tuple(x.shape)}, se esperaba [B, {self.in_ch}, {self.grid[0]}, {self.grid[1]}]"
            )
        lifted = self.lift(x)
        acumulado = lifted
        for rama in self.branches:
            acumulado = acumulado + rama(lifted)
        out = self.project(x) * self.mask(acumulado)
        if self.kind == 'ir':
            out = out + x
        return out


def _bloque(config, in_ch: int, kind: str, name: str) -> AttentionBlock:
    return AttentionBlock(in_ch, config.conv_channels, (config.n_s, config.pol_width), kind,
                          config.branch_kernels, config.leaky_slope, config.lift_kernel, name=name)


class Encoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        flat = config.n_s * config.n_t
        m = config.latent_len
        self.sa = _bloque(config, 4, 'ie', 'encoder.sa')
        self.sp_v = _bloque(config, 4, 'ie', 'encoder.sp_v')
        self.sp_h = _bloque(config, 4, 'ie', 'encoder.sp_h')
        self.fc_w = nn.Linear(flat, m)
        self.fc_v = nn.Linear(flat, m)
        self.fc_h = nn.Linear(flat, m)

    def forward(self, h_v: torch.Tensor, h_h: torch.Tensor) -> EncoderOutput:
        if h_v.shape != h_h.shape:
            raise DimensionError(f"encoder: polarizaciones con formas distintas {tuple(h_v.shape)} vs {tuple(h_h.shape)}")
        w = _check_finite('encoder.sa', self.sa(torch.cat([h_v, h_h], dim=1)))
        u_v = _check_finite('encoder.sp_v', self.sp_v(torch.cat([h_v, w], dim=1)))
        u_h = _check_finite('encoder.sp_h', self.sp_h(torch.cat([h_h, w], dim=1)))
        z_w = _check_finite('encoder.fc_w', self.fc_w(w.flatten(1)))
        z_v = _check_finite('encoder.fc_v', self.fc_v(u_v.flatten(1)))
        z_h = _check_finite('encoder.fc_h', self.fc_h(u_h.flatten(1)))
        return EncoderOutput(w, u_v, u_h, LatentTriple(z_w, z_v, z_h))


class PolarizationDecoder(nn.Module):
    def __init__(self, config, pol: str):
        super().__init__()
        self.config = config
        self.pol = pol
        self.fc = nn.Linear(2 * config.latent_len, config.n_s * config.n_t)
        self.paths = nn.ModuleList([
            nn.Sequential(*[_bloque(config, 2, 'ir', f'decoder_{pol}.paths.{p}.{d}') for d in range(config.depth)])
            for p in range(config.width)
        ])
        self.head = nn.Conv2d(2, 2, kernel_size=1, bias=True)

    def forward(self, z_pol: torch.Tensor, z_w: torch.Tensor) -> torch.Tensor:
        m = self.config.latent_len
        if z_pol.shape[-1] != m or z_w.shape[-1] != m:
            raise DimensionError(f"decoder_{self.pol}.fc: latentes de longitud {z_pol.shape[-1]}/{z_w.shape[-1]}, se esperaba {m}")
        x = self.fc(torch.cat([z_pol, z_w], dim=-1))
        x = x.view(-1, 2, self.config.n_s, self.config.pol_width)
        suma = None
        for camino in self.paths:
            y = camino(x)
            suma = y if suma is None else suma + y
        _check_finite(f'decoder_{self.pol}.paths', suma)
        return torch.sigmoid(self.head(suma))


class DiReNet(nn.Module):
    """Autoencoder de representación desenredada para CSI dual-polarizada."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.decoder_v = PolarizationDecoder(config, 'v')
        self.decoder_h = PolarizationDecoder(config, 'h')

    def encode(self, h_v: torch.Tensor, h_h: torch.Tensor) -> EncoderOutput:
        return self.encoder(h_v, h_h)

    def decode(self, latent: LatentTriple) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.decoder_v(latent.z_v, latent.z_w), self.decoder_h(latent.z_h, latent.z_w)

    def forward(self, h_v: torch.Tensor, h_h: torch.Tensor):
        enc = self.encode(h_v, h_h)
        hat_v, hat_h = self.decode(enc.latent)
        return hat_v, hat_h, enc


# ---------------------------------------------------------------------------
# Inicialización, almacén de parámetros y conteo
# ---------------------------------------------------------------------------

def init_module_(module: nn.Module, generator: torch.Generator) -> nn.Module:
    """
    Pesos conv/FC ~ U(±1/sqrt(fan_in)); sesgos 0; BN escala 1, desplazamiento 0.
    Recorre los parámetros en orden de registro (determinista por semilla).
    """
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, (nn.Conv2d, nn.Linear)):
                fan_in = sub.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                muestra = torch.rand(sub.weight.shape, generator=generator, dtype=torch.float64)
                sub.weight.copy_((muestra * 2 - 1) * bound)
                if sub.bias is not None:
                    sub.bias.zero_()
            elif isinstance(sub, nn.BatchNorm2d):
                sub.reset_running_stats()
                sub.weight.fill_(1.0)
                sub.bias.zero_()
    return module


def build_model(config, seed: int) -> DiReNet:
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return init_module_(DiReNet(config), gen)


@dataclass
class ParameterStore:
    """
    Tensores con nombre de DiReNet (y opcionalmente de los estimadores CLUB),
    más la configuración, la semilla y el paso de entrenamiento.
    """
    config: object
    params: Dict[str, torch.Tensor]
    buffers: Dict[str, torch.Tensor] = field(default_factory=dict)
    seed: int = 0
    step: int = 0
    extra: Dict[str, torch.Tensor] = field(default_factory=dict)
    meta: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_module(cls, module: nn.Module, config, seed: int = 0, step: int = 0,
                    meta: Optional[Dict[str, str]] = None) -> "ParameterStore":
        params = {n: p.detach().cpu().clone() for n, p in module.named_parameters()}
        buffers = {n: b.detach().cpu().clone() for n, b in module.named_buffers()
                   if not n.endswith('num_batches_tracked')}
        return cls(config=config, params=params, buffers=buffers, seed=seed, step=step, meta=dict(meta or {}))

    def load_into(self, module: nn.Module) -> nn.Module:
        estado = {**self.params, **self.buffers}
        resultado = module.load_state_dict(estado, strict=False)
        faltantes = [k for k in resultado.missing_keys if not k.endswith('num_batches_tracked')]
        if faltantes or resultado.unexpected_keys:
            raise DimensionError(f"Almacén incompatible: faltan {faltantes}, sobran {resultado.unexpected_keys}")
        return module

    def build(self, device: str = 'cpu') -> DiReNet:
        return self.load_into(DiReNet(self.config)).to(device)

    def element_count(self) -> int:
        return sum(t.numel() for t in self.params.values())

    def digest(self) -> str:
        return tensor_digest(self.params.items())


def init_params(config, seed: int) -> ParameterStore:
    return ParameterStore.from_module(build_model(config, seed), config, seed=seed)


def tensor_digest(items: Iterable[Tuple[str, torch.Tensor]]) -> str:
    h = hashlib.sha256()
    for nombre, t in items:
        h.update(nombre.encode('utf-8'))
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def parameter_digest(module: nn.Module) -> str:
    """Hash de todos los parámetros entrenables (aislamiento de pasos)."""
    return tensor_digest(module.named_parameters())


@dataclass
class ParamBreakdown:
    encoder_fc: int
    decoder_fc: int
    encoder_conv: int
    decoder_trunk: int
    decoder_head: int
    encoder_fc_weights: int
    decoder_fc_weights: int

    @property
    def conv(self) -> int:
        return self.encoder_conv + self.decoder_trunk + self.decoder_head

    @property
    def total(self) -> int:
        return self.encoder_fc + self.decoder_fc + self.conv

    def as_dict(self) -> Dict[str, int]:
        return {
            'encoder_fc': self.encoder_fc, 'decoder_fc': self.decoder_fc,
            'encoder_conv': self.encoder_conv, 'decoder_trunk': self.decoder_trunk,
            'decoder_head': self.decoder_head, 'conv': self.conv,
            'encoder_fc_weights': self.encoder_fc_weights, 'decoder_fc_weights': self.decoder_fc_weights,
            'total': self.total,
        }


def _grupo(nombre: str) -> str:
    if nombre.startswith('encoder.fc_'):
        return 'encoder_fc'
    if nombre.startswith('encoder.'):
        return 'encoder_conv'
    if '.fc.' in nombre:
        return 'decoder_fc'
    if '.paths.' in nombre:
        return 'decoder_trunk'
    return 'decoder_head'


def count_params_actual(config) -> ParamBreakdown:
    """Cuenta de elementos por grupo sobre el ParameterStore de la configuración."""
    with torch.device('meta'):
        modelo = DiReNet(config)
    cuentas = {g: 0 for g in ('encoder_fc', 'decoder_fc', 'encoder_conv', 'decoder_trunk', 'decoder_head')}
    pesos_enc = pesos_dec = 0
    for nombre, p in modelo.named_parameters():
        grupo = _grupo(nombre)
        cuentas[grupo] += p.numel()
        if nombre.endswith('weight'):
            if grupo == 'encoder_fc':
                pesos_enc += p.numel()
            elif grupo == 'decoder_fc':
                pesos_dec += p.numel()
    return ParamBreakdown(encoder_fc_weights=pesos_enc, decoder_fc_weights=pesos_dec, **cuentas)


def parameter_group(nombre: str) -> str:
    """Grupo de alto nivel (encoder / decoder / f1 / f2) de un nombre de tensor."""
    if nombre.startswith('mi.f1.'):
        return 'f1'
    if nombre.startswith('mi.f2.'):
        return 'f2'
    return 'encoder' if nombre.startswith('encoder.') else 'decoder'


# ---------------------------------------------------------------------------
# Inferencia por lotes sobre arreglos NumPy
# ---------------------------------------------------------------------------

def _dispositivo(model: nn.Module):
    p = next(model.parameters())
    return p.device, p.dtype


@torch.no_grad()
def encode_arrays(model: DiReNet, h_v, h_h, batch_size: int = 256) -> LatentTriple:
    """Latentes (modo evaluación) de mapas normalizados [T, 2, N_s, W]."""
    device, dtype = _dispositivo(model)
    previo = model.training
    model.eval()
    partes = {'z_w': [], 'z_v': [], 'z_h': []}
    for inicio in range(0, h_v.shape[0], batch_size):
        v = torch.as_tensor(h_v[inicio:inicio + batch_size], dtype=dtype, device=device)
        h = torch.as_tensor(h_h[inicio:inicio + batch_size], dtype=dtype, device=device)
        latente = model.encode(v, h).latent
        for nombre in partes:
            partes[nombre].append(getattr(latente, nombre).cpu().numpy())
    model.train(previo)
    return LatentTriple(*(np.concatenate(partes[n]) for n in ('z_w', 'z_v', 'z_h')))


@torch.no_grad()
def decode_arrays(model: DiReNet, latent: LatentTriple, batch_size: int = 256):
    """Mapas normalizados reconstruidos (ĥ_v, ĥ_h) desde latentes NumPy."""
    device, dtype = _dispositivo(model)
    previo = model.training
    model.eval()
    salida_v, salida_h = [], []
    for inicio in range(0, latent.z_w.shape[0], batch_size):
        trozo = LatentTriple(*(torch.as_tensor(z[inicio:inicio + batch_size], dtype=dtype, device=device)
                               for z in latent))
        hat_v, hat_h = model.decode(trozo)
        salida_v.append(hat_v.cpu().numpy())
        salida_h.append(hat_h.cpu().numpy())
    model.train(previo)
    return np.concatenate(salida_v), np.concatenate(salida_h)


def reconstruct_arrays(model: DiReNet, h_v, h_h, batch_size: int = 256):
    return decode_arrays(model, encode_arrays(model, h_v, h_h, batch_size), batch_size)
