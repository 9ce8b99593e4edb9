"""
Estimación de información mutua CLUB y regularizador MI.

q(y|x) es una gaussiana diagonal con media y log-varianza producidas por
una red pequeña sobre la proyección de x.
"""

import logging
import math
from contextlib import contextmanager
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn
from tqdm import tqdm

from config import settings
from core.direnet import init_module_
from core.errors import BatchTooSmallError, CsiDomainError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class MiEstimator(nn.Module):
    """
    Estimador variacional de q(y|x).

    x se aplana y proyecta (afín, entrenable) al ancho oculto. y se aplana y,
    si supera el ancho oculto, se proyecta con una matriz aleatoria fija;
    si no, se modela tal cual.
    """

    def __init__(self, x_dim: int, y_dim: int, hidden: int = settings.MI_HIDDEN,
                 generator: Optional[torch.Generator] = None):
        super().__init__()
        if generator is None:
            generator = torch.Generator()
            generator.manual_seed(0)
        self.x_dim = x_dim
        self.y_dim = y_dim
        self.hidden = hidden
        self.out_dim = min(y_dim, hidden)

        if y_dim > hidden:
            proj = torch.randn(y_dim, hidden, generator=generator, dtype=torch.float64) / math.sqrt(y_dim)
        else:
            proj = torch.eye(y_dim, dtype=torch.float64)
        self.register_buffer('y_proj', proj.to(torch.float32))

        self.x_proj = nn.Linear(x_dim, hidden)
        self.p_mu = nn.Sequential(nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, self.out_dim))
        self.p_logvar = nn.Sequential(nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, self.out_dim))
        init_module_(self, generator)

    def project_y(self, y: torch.Tensor) -> torch.Tensor:
        return y.flatten(1) @ self.y_proj

    def get_mu_logvar(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        feat = self.x_proj(x.flatten(1))
        mu = self.p_mu(feat)
        logvar = self.p_logvar(feat).clamp(-settings.MI_LOGVAR_CLAMP, settings.MI_LOGVAR_CLAMP)
        return mu, logvar

    def log_likelihood(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """ln q(y_i|x_i) por muestra."""
        mu, logvar = self.get_mu_logvar(x)
        y = self.project_y(y)
        return (-0.5 * (LOG_2PI + logvar + (y - mu) ** 2 / logvar.exp())).sum(dim=-1)

    def dims(self) -> str:
        return f"{self.x_dim},{self.y_dim},{self.hidden}"


def _validar_lote(x: torch.Tensor, y: torch.Tensor):
    if x.shape[0] != y.shape[0]:
        raise CsiDomainError(f"x e y con tamaños de lote distintos: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise BatchTooSmallError(f"CLUB necesita al menos 2 muestras, recibido {x.shape[0]}")


def club_mi_estimate(x: torch.Tensor, y: torch.Tensor, estimator: MiEstimator) -> torch.Tensor:
    """
    (1/N) Σ_i [ln q(y_i|x_i) − (1/N) Σ_j ln q(y_j|x_i)] en nats.

    El término negativo (todos los pares) se obtiene en forma cerrada:
    mean_j (y_j − μ_i)² = mean(y²) − 2·μ_i·ȳ + μ_i²
    """
    _validar_lote(x, y)
    mu, logvar = estimator.get_mu_logvar(x)
    yp = estimator.project_y(y)
    var = logvar.exp()

    positivo = (-0.5 * (yp - mu) ** 2 / var).sum(dim=-1)
    segundo_momento = (yp ** 2).mean(dim=0, keepdim=True)
    media = yp.mean(dim=0, keepdim=True)
    cuadrado_medio = segundo_momento - 2 * mu * media + mu ** 2
    negativo = (-0.5 * cuadrado_medio / var).sum(dim=-1)
    return (positivo - negativo).mean()


def club_nll_loss(x: torch.Tensor, y: torch.Tensor, estimator: MiEstimator) -> torch.Tensor:
    """− media de ln q(y_i|x_i) (pérdida de entrenamiento del estimador)."""
    if x.shape[0] != y.shape[0]:
        raise CsiDomainError(f"x e y con tamaños de lote distintos: {x.shape[0]} vs {y.shape[0]}")
    return -estimator.log_likelihood(x, y).mean()


def gaussian_mi_oracle(rho: float, dim: int) -> float:
    """I(x;y) = −dim/2 · ln(1−ρ²) para pares gaussianos con correlación ρ por dimensión."""
    if not -1.0 < rho < 1.0:
        raise CsiDomainError(f"ρ debe estar en (−1, 1), recibido {rho}")
    return -0.5 * dim * math.log1p(-rho * rho)


def gaussian_club_oracle(rho: float, dim: int) -> float:
    """
    Valor de la cota CLUB con la condicional exacta sobre pares gaussianos:
    dim·ρ²/(1−ρ²). Es el valor al que converge un estimador bien entrenado.
    """
    if not -1.0 < rho < 1.0:
        raise CsiDomainError(f"ρ debe estar en (−1, 1), recibido {rho}")
    return dim * rho * rho / (1.0 - rho * rho)


@contextmanager
def frozen(*modules: nn.Module):
    """Congela los parámetros (requires_grad=False) y restaura al salir."""
    estados = [(p, p.requires_grad) for m in modules for p in m.parameters()]
    for p, _ in estados:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, previo in estados:
            p.requires_grad_(previo)


def joint_inputs(h_v: torch.Tensor, h_h: torch.Tensor) -> torch.Tensor:
    return torch.cat([h_v, h_h], dim=1).flatten(1)


def mi_terms(h_v: torch.Tensor, h_h: torch.Tensor, w: torch.Tensor,
             f1: MiEstimator, f2: MiEstimator) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    (Î(H_v,H_h;W), Î(H_v;H_h)) sobre el mismo lote; f1 y f2 congelados,
    el gradiente llega al encoder solo a través de W.
    """
    with frozen(f1, f2):
        i_joint = club_mi_estimate(joint_inputs(h_v, h_h), w, f1)
        i_pol = club_mi_estimate(h_v, h_h, f2)
    return i_joint, i_pol


def mi_regularizer(h_v: torch.Tensor, h_h: torch.Tensor, w: torch.Tensor,
                   f1: MiEstimator, f2: MiEstimator, delta: float = 0.0) -> torch.Tensor:
    """L_MI = (Î(H_v,H_h;W) − Î(H_v;H_h) − δ)², δ en nats."""
    i_joint, i_pol = mi_terms(h_v, h_h, w, f1, f2)
    return mi_distance(i_joint, i_pol, delta)


def mi_distance(i_joint: torch.Tensor, i_pol: torch.Tensor, delta: float = 0.0) -> torch.Tensor:
    return (i_joint - i_pol - delta) ** 2


def build_estimators(n_s: int, n_t: int, hidden: int, generator: torch.Generator) -> Tuple[MiEstimator, MiEstimator]:
    """f1: (concat(h_v,h_h), W); f2: (h_v, h_h). Entradas aplanadas."""
    flat = n_s * n_t          # 2 canales × n_s × n_t/2
    f1 = MiEstimator(2 * flat, flat, hidden, generator)
    f2 = MiEstimator(flat, flat, hidden, generator)
    return f1, f2


def estimator_tensors(f1: MiEstimator, f2: MiEstimator) -> Dict[str, torch.Tensor]:
    """Tensores de ambos estimadores bajo el prefijo reservado del checkpoint."""
    tensores = {}
    for etiqueta, est in (('f1', f1), ('f2', f2)):
        for nombre, t in est.state_dict().items():
            tensores[f"{settings.MI_PREFIX}{etiqueta}.{nombre}"] = t.detach().cpu().clone()
    return tensores


def estimators_from_store(store) -> Optional[Tuple[MiEstimator, MiEstimator]]:
    """Reconstruye f1, f2 desde un ParameterStore (None si el checkpoint no los trae)."""
    if not store.extra or 'mi_f1_dims' not in store.meta:
        return None
    estimadores = []
    for etiqueta in ('f1', 'f2'):
        x_dim, y_dim, hidden = (int(v) for v in store.meta[f'mi_{etiqueta}_dims'].split(','))
        est = MiEstimator(x_dim, y_dim, hidden)
        prefijo = f"{settings.MI_PREFIX}{etiqueta}."
        estado = {k[len(prefijo):]: v for k, v in store.extra.items() if k.startswith(prefijo)}
        est.load_state_dict(estado)
        estimadores.append(est)
    return estimadores[0], estimadores[1]


def train_estimator(estimator: MiEstimator, x: torch.Tensor, y: torch.Tensor, epochs: int,
                    batch_size: int = 256, lr: float = settings.LEARNING_RATE,
                    generator: Optional[torch.Generator] = None, progress: bool = False) -> list:
    """
    Entrena un estimador aislado minimizando club_nll_loss (pares fijos x_i, y_i).

    Returns:
        Pérdida media por época
    """
    opt = torch.optim.Adam(estimator.parameters(), lr=lr)
    historial = []
    estimator.train()
    for _ in tqdm(range(epochs), desc="CLUB", disable=not progress):
        orden = torch.randperm(x.shape[0], generator=generator)
        total, lotes = 0.0, 0
        for inicio in range(0, x.shape[0], batch_size):
            idx = orden[inicio:inicio + batch_size]
            opt.zero_grad()
            perdida = club_nll_loss(x[idx], y[idx], estimator)
            perdida.backward()
            opt.step()
            total += perdida.item()
            lotes += 1
        historial.append(total / max(lotes, 1))
    estimator.eval()
    return historial
