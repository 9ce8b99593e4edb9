"""
Escritura de tablas de resultados (CSV delimitado por comas) y resúmenes
clave=valor para graficado externo
"""

import logging
import os
from typing import Dict, Optional

import pandas as pd


class ReportWriter:
    """
    Escribe tablas y resúmenes de una corrida en un directorio de salida
    """

    def __init__(self, output_dir: Optional[str] = None):
        """
        Inicializa el escritor de reportes

        Args:
            output_dir: Directorio donde guardar los archivos
        """
        if output_dir is None:
            self.output_dir = os.path.join(os.path.dirname(__file__), '..', 'runs', 'reports')
        else:
            self.output_dir = output_dir

        # Asegurar que el directorio existe
        os.makedirs(self.output_dir, exist_ok=True)

        self.logger = logging.getLogger(self.__class__.__name__)

    def path_for(self, name: str, extension: str = 'csv') -> str:
        return os.path.join(self.output_dir, f"{name}.{extension}")

    def write_table(self, table: pd.DataFrame, name: str) -> str:
        """
        Escribe un DataFrame como CSV (fila de encabezado, sin índice)

        Args:
            table: Tabla a escribir
            name: Nombre base del archivo

        Returns:
            Ruta del archivo generado
        """
        filepath = self.path_for(name)
        table.to_csv(filepath, index=False, encoding='utf-8')
        self.logger.info(f"💾 {name}: {len(table)} filas → {filepath}")
        return filepath

    def write_summary(self, summary: Dict[str, object], name: str = 'summary') -> str:
        """Resumen estructurado en líneas clave=valor."""
        filepath = self.path_for(name, 'txt')
        with open(filepath, 'w', encoding='utf-8') as f:
            for clave, valor in summary.items():
                f.write(f"{clave}={valor}\n")
        self.logger.info(f"💾 Resumen → {filepath}")
        return filepath

    @staticmethod
    def print_table(table: pd.DataFrame, title: Optional[str] = None):
        """Muestra una tabla por consola (comandos de inspección)."""
        if title:
            print(f"\n📊 {title}")
            print("=" * 60)
        print(table.to_string(index=False))
