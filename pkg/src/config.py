from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class Config(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="FRAC_", extra="ignore")

    # Sampling seed for estimate_constants (FRAC_SEED)
    seed: int = 20240601
    log_level: str = "WARNING"

    # Series truncation
    series_rel_tol: float = 1e-14
    series_max_terms: int = 400

    # Subordination quadrature
    theta_max: float = 50.0
    theta_nodes: int = 600

    # Picard iteration
    solver_tol: float = 1e-8
    solver_max_iter: int = 200

    # Fraction of the horizon left out of residual sup-norms
    residual_layer: float = 0.05

    gronwall_terms: int = 30
    estimate_samples: int = 10000


config = Config()
