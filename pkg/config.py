import os
from dotenv import load_dotenv
import logging

load_dotenv()
logger = logging.getLogger(__name__)


def _optional_int(name: str):
    value = os.getenv(name, "").strip()
    return int(value) if value else None


class Config:
    # Truncamiento y cotas de grado
    ORDER = int(os.getenv("HK_ORDER", 6))
    DEGREE_BOUND = _optional_int("HK_DEGREE_BOUND")
    BACKEND = os.getenv("HK_BACKEND", "exact").lower()

    # Aleatoriedad (muestras de U, puntos del mapa, secciones)
    SEED = int(os.getenv("HK_SEED", 0))
    THREADS = int(os.getenv("HK_THREADS", 1))

    # Carta numérica de la subvariedad integral
    CHART_RADIUS = float(os.getenv("HK_CHART_RADIUS", 0.05))
    CHART_STEPS = int(os.getenv("HK_CHART_STEPS", 16))
    U_SAMPLE_CAP = int(os.getenv("HK_U_SAMPLE_CAP", 6))
    JHAT_PAIRING = os.getenv("HK_JHAT_PAIRING", "row").lower()

    # Tolerancias numéricas
    NEWTON_MAX_ITER = int(os.getenv("HK_NEWTON_MAX_ITER", 50))
    NEWTON_TOL = float(os.getenv("HK_NEWTON_TOL", 1e-12))
    DET_TOL = float(os.getenv("HK_DET_TOL", 1e-10))
    FLOAT_TOL = float(os.getenv("HK_FLOAT_TOL", 1e-9))
    ROUTE_TOL = float(os.getenv("HK_ROUTE_TOL", 1e-8))
    REALITY_TOL = float(os.getenv("HK_REALITY_TOL", 1e-8))
    RANK_TOL = float(os.getenv("HK_RANK_TOL", 1e-8))
    JACOBIAN_STEP = float(os.getenv("HK_JACOBIAN_STEP", 1e-6))
    RICCI_STEP = float(os.getenv("HK_RICCI_STEP", 1e-3))
    DIVERGENCE_BOUND = float(os.getenv("HK_DIVERGENCE_BOUND", 1e3))

    # Servidor
    HOST = os.getenv("HOST", "0.0.0.0")
    PORT = int(os.getenv("PORT", 8000))
    DEBUG = os.getenv("DEBUG", "False").lower() == "true"

    # Logging
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("LOG_FILE", "hk_engine.log")

    @classmethod
    def degree_bound(cls, order: int = None) -> int:
        """Cota de grado en u; por defecto 2·orden + 4"""
        if cls.DEGREE_BOUND is not None:
            return cls.DEGREE_BOUND
        return 2 * (cls.ORDER if order is None else order) + 4

    @classmethod
    def validate(cls):
        problems = []
        if cls.ORDER < 1:
            problems.append("HK_ORDER debe ser >= 1")
        if cls.BACKEND not in ("exact", "float"):
            problems.append(f"HK_BACKEND desconocido: {cls.BACKEND}")
        if cls.JHAT_PAIRING not in ("row", "column"):
            problems.append(f"HK_JHAT_PAIRING desconocido: {cls.JHAT_PAIRING}")
        if cls.CHART_STEPS < 1 or cls.CHART_RADIUS <= 0:
            problems.append("La carta necesita HK_CHART_STEPS >= 1 y HK_CHART_RADIUS > 0")
        if cls.THREADS < 1:
            problems.append("HK_THREADS debe ser >= 1")

        if problems:
            for problem in problems:
                logger.warning(f"⚠️ Configuración inválida: {problem}")
            return False
        return True

    @classmethod
    def print_config(cls):
        print("\n" + "="*50)
        print("CONFIGURACIÓN DEL MOTOR HIPERKÄHLER")
        print("="*50)
        print(f"Orden de truncamiento: {cls.ORDER}")
        print(f"Cota de grado en u: {cls.degree_bound()}")
        print(f"Backend: {cls.BACKEND}")
        print(f"Semilla: {cls.SEED}")
        print(f"Carta: radio {cls.CHART_RADIUS}, {cls.CHART_STEPS} pasos")
        print(f"Server: {cls.HOST}:{cls.PORT}")
        print("="*50 + "\n")

    @classmethod
    def setup_logging(cls):
        logging.basicConfig(
            level=getattr(logging, cls.LOG_LEVEL.upper(), logging.INFO),
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=[
                logging.FileHandler(cls.LOG_FILE),
                logging.StreamHandler()
            ]
        )
