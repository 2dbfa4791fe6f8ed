import os
from dotenv import load_dotenv

load_dotenv()

# JSON contract version, stamped into every JSON root
SCHEMA_VERSION = "1.0"

# Worker cap for fold-wise fitting and Monte Carlo chunks
DEFAULT_THREADS = int(os.getenv("CPB_THREADS", "1"))

# Where simulate writes its cohort when no --out stem is given
OUTPUT_DIR = os.getenv("CPB_OUTPUT_DIR", "output")

# Estimation defaults
ANALYSIS_CONFIG = {
    "folds": 2,
    "epsilon": 0.01,
    "alpha": 0.05,
    "grid_points": 101,
    "swap_second_stage": True,
    "default_learner": "kernel",
}

# Simulation / oracle defaults
SIMULATION_CONFIG = {
    "noise_sd": 1.0,
    "oracle_draws": 1_000_000,
    "regret_draws": 100_000,
    "mc_chunk": 100_000,
    "profile_grid": 401,
    "peak_fraction": 0.8,
    # confounded scenario: outcome shift and treatment log-odds shift per unit of hidden U
    "confounding_strength": 0.2,
    "treatment_strength": 1.0,
}

# ============================================================================
# LEARNER PRESETS: named regression specs usable wherever a spec string is
# accepted. Each preset is a spec string understood by
# benefit.services.learners.parse_learner_spec.
# ============================================================================
LEARNER_PRESETS = {
    "kernel_wide": "kernel:h=0.5",
    "kernel_narrow": "kernel:h=0.15",
    "local_linear_wide": "local_linear:h=0.5",
    "ridge_light": "linear:lambda=0.1",
    "knn_50": "knn:k=50",
}


def get_learner_preset(name: str) -> str:
    """Get a learner spec string by preset name."""
    preset = LEARNER_PRESETS.get(name)
    if not preset:
        available = ", ".join(LEARNER_PRESETS.keys())
        raise ValueError(f"Unknown learner preset: '{name}'. Available: {available}")
    return preset
