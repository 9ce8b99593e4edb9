"""
Modelos estrictos (pydantic) de toda la configuración del laboratorio
"""

import math
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import settings
from config.escenarios import get_escenario, get_escenarios_disponibles

STREAM_NAMES = ('z_w', 'z_v', 'z_h')


def _parse_number_list(v, cast=float):
    """Acepta listas o cadenas '1, 2, 3' (archivos de configuración y flags)."""
    if isinstance(v, str):
        partes = [p.strip() for p in v.replace(';', ',').split(',')]
        return [cast(p) for p in partes if p]
    return v


class ScenarioConfig(BaseModel):
    """
    Escenario de canal multitrayecto con acoplamiento de fase κ.

    Los parámetros del generador valen None cuando se desconocen
    (datos importados o mezcla de escenarios distintos).
    """
    name: str = Field(..., description="Etiqueta del escenario")
    n_paths: Optional[int] = Field(None, ge=1, description="Número de trayectos")
    phase_coupling: Optional[float] = Field(None, ge=0.0, le=1.0,
                                            description="κ: 1 = fases idénticas entre polarizaciones")
    delay_spread: Optional[float] = Field(None, gt=0.0, description="Dispersión de retardo normalizada")
    angle_spread: Optional[float] = Field(0.5, ge=0.0, description="Dispersión angular (rad)")
    target_gcs: Optional[float] = Field(None, ge=0.0, le=1.0, description="GCS de magnitud objetivo")

    @property
    def generable(self) -> bool:
        """True si todos los parámetros del generador son conocidos."""
        return None not in (self.n_paths, self.phase_coupling, self.delay_spread, self.angle_spread)

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "ScenarioConfig":
        preset = dict(get_escenario(name))
        preset.pop('descripcion', None)
        preset.update({k: v for k, v in overrides.items() if v is not None})
        return cls(name=name.lower(), **preset)


class ModelConfig(BaseModel):
    """Hiperparámetros de arquitectura de DiReNet"""
    n_s: int = Field(settings.DEFAULT_NS, ge=1)
    n_t: int = Field(settings.DEFAULT_NT, ge=2)
    sigma: float = Field(settings.DEFAULT_SIGMA, description="Relación de compresión σ > 1")
    latent_len: Optional[int] = Field(None, ge=1, description="M; se deriva de (n_s, n_t, σ) si falta")
    branch_kernels: List[int] = Field(default_factory=lambda: list(settings.BRANCH_KERNELS))
    conv_channels: int = Field(settings.CONV_CHANNELS, ge=1)
    depth: int = Field(settings.IR_DEPTH, ge=1)
    width: int = Field(settings.IR_WIDTH, ge=1)
    leaky_slope: float = Field(settings.LEAKY_SLOPE, ge=0.0)
    lift_kernel: int = Field(settings.LIFT_KERNEL, ge=1)

    @field_validator('n_t')
    def validar_nt(cls, v):
        if v % 2:
            raise ValueError(f"n_t debe ser par (antenas dual-polarizadas), recibido {v}")
        return v

    @field_validator('sigma')
    def validar_sigma(cls, v):
        if not v > 1:
            raise ValueError(f"La relación de compresión debe ser > 1, recibido {v}")
        return v

    @field_validator('branch_kernels', mode='before')
    def validar_kernels(cls, v):
        v = _parse_number_list(v, int)
        if any(k < 1 or k % 2 == 0 for k in v):
            raise ValueError(f"Los kernels de rama deben ser impares y positivos: {v}")
        return v

    @model_validator(mode='after')
    def derivar_latente(self):
        if self.latent_len is None:
            from core.direnet import latent_length
            self.latent_len = latent_length(self.n_s, self.n_t, self.sigma)
        return self

    @property
    def pol_width(self) -> int:
        return self.n_t // 2

    def to_kv(self) -> Dict[str, str]:
        datos = self.model_dump()
        datos['branch_kernels'] = ','.join(str(k) for k in self.branch_kernels)
        return {k: str(v) for k, v in datos.items()}

    @classmethod
    def from_kv(cls, kv: Dict[str, str]) -> "ModelConfig":
        campos = {k: v for k, v in kv.items() if k in cls.model_fields}
        return cls(**campos)


class TrainConfig(BaseModel):
    """Hiperparámetros del entrenamiento alternado de dos pasos"""
    lr: float = Field(settings.LEARNING_RATE, gt=0.0)
    lam: float = Field(settings.LAMBDA_MI, ge=0.0, description="Peso λ de L_MI")
    mi_target: float = Field(settings.MI_TARGET_NATS, description="δ en nats")
    epochs: int = Field(settings.EPOCHS, ge=0)
    batch_size: int = Field(settings.BATCH_SIZE, ge=2)
    seed: int = 0
    betas: Tuple[float, float] = settings.ADAM_BETAS
    adam_eps: float = Field(settings.ADAM_EPS, gt=0.0)
    grad_clip: float = Field(settings.GRAD_CLIP_NORM, gt=0.0)
    checkpoint_every: int = Field(settings.CHECKPOINT_EVERY, ge=1)
    mi_hidden: int = Field(settings.MI_HIDDEN, ge=1)
    device: str = 'cpu'


class QuantConfig(BaseModel):
    """Niveles de cuantización por flujo y rangos afines ajustados"""
    q_sa: int = Field(settings.DEFAULT_Q_SA, ge=settings.QUANT_MIN_BITS, le=settings.QUANT_MAX_BITS)
    q_sp: int = Field(settings.DEFAULT_Q_SP, ge=settings.QUANT_MIN_BITS, le=settings.QUANT_MAX_BITS)
    ranges: Optional[Dict[str, Tuple[float, float]]] = None

    @field_validator('ranges')
    def validar_rangos(cls, v):
        if v is None:
            return v
        for nombre, (lo, hi) in v.items():
            if nombre not in STREAM_NAMES:
                raise ValueError(f"Flujo desconocido '{nombre}'")
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"Rango inválido para {nombre}: ({lo}, {hi})")
        return v

    def bits_for(self, stream: str) -> int:
        return self.q_sa if stream == 'z_w' else self.q_sp


class RunConfig(BaseModel):
    """
    Vista plana y completamente resuelta de una corrida
    (defaults < archivo de configuración < flags).
    """
    model_config = ConfigDict(extra='forbid')

    command: Optional[str] = None
    # escenario / datos
    scenario: str = 'cdl-a'
    kappa: Optional[float] = Field(None, ge=0.0, le=1.0)
    n_paths: Optional[int] = Field(None, ge=1)
    calibrate: bool = False
    count: int = Field(1000, ge=1)
    n_s: int = Field(settings.DEFAULT_NS, ge=1)
    n_t: int = Field(settings.DEFAULT_NT, ge=2)
    seed: int = 0
    # modelo
    sigma: float = settings.DEFAULT_SIGMA
    conv_channels: int = Field(settings.CONV_CHANNELS, ge=1)
    depth: int = Field(settings.IR_DEPTH, ge=1)
    width: int = Field(settings.IR_WIDTH, ge=1)
    # entrenamiento
    epochs: int = Field(settings.EPOCHS, ge=0)
    batch_size: int = Field(settings.BATCH_SIZE, ge=2)
    lr: float = Field(settings.LEARNING_RATE, gt=0.0)
    lam: float = Field(settings.LAMBDA_MI, ge=0.0)
    mi_target_bits: float = 0.0
    mi_targets_bits: List[float] = Field(default_factory=list)
    depths: List[int] = Field(default_factory=lambda: [1, 2, 3])
    widths: List[int] = Field(default_factory=lambda: [1, 3, 5])
    device: str = 'cpu'
    # cuantización
    q_sa: int = Field(settings.DEFAULT_Q_SA, ge=settings.QUANT_MIN_BITS, le=settings.QUANT_MAX_BITS)
    q_sp: int = Field(settings.DEFAULT_Q_SP, ge=settings.QUANT_MIN_BITS, le=settings.QUANT_MAX_BITS)
    # tasa
    users: int = Field(settings.RATE_USERS, ge=1)
    trials: int = Field(settings.RATE_TRIALS, ge=1)
    snr_grid: List[float] = Field(default_factory=lambda: list(settings.SNR_GRID_DB))
    # rutas
    data: Optional[str] = None
    val: Optional[str] = None
    ckpt: Optional[str] = None
    out: Optional[str] = None
    report: Optional[str] = None
    inputs: List[str] = Field(default_factory=list)

    @field_validator('snr_grid', 'mi_targets_bits', mode='before')
    def validar_listas_float(cls, v):
        return _parse_number_list(v, float)

    @field_validator('depths', 'widths', 'inputs', mode='before')
    def validar_listas(cls, v, info):
        if info.field_name == 'inputs':
            return _parse_number_list(v, str)
        return _parse_number_list(v, int)

    @field_validator('scenario')
    def validar_escenario(cls, v):
        if v.lower() not in get_escenarios_disponibles():
            raise ValueError(f"Escenario '{v}' no válido. Disponibles: {get_escenarios_disponibles()}")
        return v.lower()

    def build_scenario_config(self) -> ScenarioConfig:
        return ScenarioConfig.from_preset(self.scenario, phase_coupling=self.kappa, n_paths=self.n_paths)

    def build_model_config(self, **overrides) -> ModelConfig:
        campos = dict(n_s=self.n_s, n_t=self.n_t, sigma=self.sigma, conv_channels=self.conv_channels,
                      depth=self.depth, width=self.width)
        campos.update(overrides)
        return ModelConfig(**campos)

    def build_train_config(self, **overrides) -> TrainConfig:
        campos = dict(lr=self.lr, lam=self.lam, mi_target=self.mi_target_bits * math.log(2.0),
                      epochs=self.epochs, batch_size=self.batch_size, seed=self.seed, device=self.device)
        campos.update(overrides)
        return TrainConfig(**campos)

    def build_quant_config(self) -> QuantConfig:
        return QuantConfig(q_sa=self.q_sa, q_sp=self.q_sp)

    def to_manifest(self) -> Dict[str, str]:
        datos = {}
        for clave, valor in self.model_dump().items():
            if valor is None:
                continue
            if isinstance(valor, (list, tuple)):
                valor = ','.join(str(x) for x in valor)
            datos[clave] = str(valor)
        return datos
