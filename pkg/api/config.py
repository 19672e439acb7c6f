# ==============================================================================
# CONFIGURATION - Service et CLI MaskForge
# ==============================================================================

from pydantic_settings import BaseSettings
from typing import List, Tuple


class Settings(BaseSettings):
    """
    Configuration centralisée (variables d'environnement MASKFORGE_*)

    Les valeurs par défaut du pipeline servent au CLI comme à l'API ;
    un drapeau explicite l'emporte toujours sur l'environnement.
    """

    # Application
    APP_NAME: str = "MaskForge API"
    APP_VERSION: str = "1.0.0"
    DEBUG: bool = False
    LOG_LEVEL: str = "WARNING"

    # Graine maîtresse (MASKFORGE_SEED)
    SEED: int = 0

    # Patches
    PATCHES: int = 64
    KNN: int = 32
    GRID: Tuple[int, int, int] = (4, 4, 4)

    # Curriculum
    RATIO: float = 0.75
    GAMMA: float = 2.0
    C_MAX: int = 40
    C_MIN: int = 10
    Q_START: float = 0.5
    Q_END: float = 0.9
    TOTAL_ITERS: int = 100

    # EM
    EM_MAX_ITERS: int = 50
    EM_TOL: float = 1e-6
    VARIANCE_FLOOR: float = 1e-6

    # Attention synthétique et nuages de démonstration
    SYNTH_BANDWIDTH: float = 0.3
    SYNTH_POINTS: int = 1024

    # Études de rotation
    MAX_WORKERS: int = 1

    # CORS
    ALLOWED_ORIGINS: List[str] = [
        "http://localhost:3000",
        "http://localhost:8000",
    ]

    # Rate Limiting
    RATE_LIMIT_ROTCHECK: str = "10/minute"

    class Config:
        env_prefix = "MASKFORGE_"
        env_file = ".env"
        case_sensitive = True


settings = Settings()
