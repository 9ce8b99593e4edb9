"""
Escenarios de canal predefinidos (análogos geométricos de CDL-A/B/C)

delay_spread está normalizado a la resolución de retardo 1/(N_s * Δf_subbanda):
30/100/300 ns sobre 32 subbandas de 360 kHz.
"""

from typing import Dict, List, Optional, TypedDict


class EscenarioPreset(TypedDict):
    n_paths: int
    phase_coupling: float        # κ inicial, se recalibra contra target_gcs
    delay_spread: float
    angle_spread: float          # radianes
    target_gcs: Optional[float]  # GCS de magnitud media objetivo
    descripcion: str


ESCENARIOS: Dict[str, EscenarioPreset] = {
    "cdl-a": {
        "n_paths": 23,
        "phase_coupling": 0.85,
        "delay_spread": 0.35,
        "angle_spread": 0.35,
        "target_gcs": 0.936,
        "descripcion": "CDL-A: 30 ns, 3 km/h, alta correlación de polarización",
    },
    "cdl-b": {
        "n_paths": 23,
        "phase_coupling": 0.7,
        "delay_spread": 1.15,
        "angle_spread": 0.5,
        "target_gcs": 0.869,
        "descripcion": "CDL-B: 100 ns, 30 km/h",
    },
    "cdl-c": {
        "n_paths": 24,
        "phase_coupling": 0.45,
        "delay_spread": 3.46,
        "angle_spread": 0.7,
        "target_gcs": 0.741,
        "descripcion": "CDL-C: 300 ns, 120 km/h, baja correlación",
    },
    "quadriga-like": {
        "n_paths": 40,
        "phase_coupling": 0.6,
        "delay_spread": 0.8,
        "angle_spread": 0.6,
        "target_gcs": None,
        "descripcion": "Canal desconocido para pruebas de generalización",
    },
}


def get_escenario(nombre: str) -> EscenarioPreset:
    """
    Obtiene el preset de un escenario

    Args:
        nombre: Nombre del escenario (cdl-a, cdl-b, ...)

    Returns:
        Diccionario con los parámetros del escenario
    """
    clave = nombre.lower()
    if clave not in ESCENARIOS:
        raise ValueError(f"Escenario '{nombre}' no válido. Disponibles: {get_escenarios_disponibles()}")
    return ESCENARIOS[clave]


def get_escenarios_disponibles() -> List[str]:
    """Retorna los nombres de escenarios disponibles."""
    return list(ESCENARIOS.keys())


def get_descripcion_escenario(nombre: str) -> str:
    return get_escenario(nombre)["descripcion"]
