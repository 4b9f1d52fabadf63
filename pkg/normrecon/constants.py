import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv("normrecon.env")

# Linear algebra configuration
SIZE_CAP = int(os.getenv("NORMRECON_SIZE_CAP", 10**8))
SOLVER_TOLERANCE = float(os.getenv("NORMRECON_SOLVER_TOLERANCE", 1e-8))

# Construction configuration
LINEARIZATION_MARGIN = float(os.getenv("NORMRECON_MARGIN", 1e-3))
ZERO_SCALE_TOLERANCE = float(os.getenv("NORMRECON_ZERO_SCALE_TOL", 1e-12))
MAX_RESAMPLES = int(os.getenv("NORMRECON_MAX_RESAMPLES", 5))
DEEP_REDRAWS = int(os.getenv("NORMRECON_DEEP_REDRAWS", 32))
DEFAULT_CBAR = float(os.getenv("NORMRECON_CBAR", 1.0))
DEFAULT_WORKERS = int(os.getenv("NORMRECON_WORKERS", 1))

# Verification configuration
DEFAULT_SAMPLES = int(os.getenv("NORMRECON_SAMPLES", 1000))
EQUIVALENCE_TOLERANCE = float(os.getenv("NORMRECON_EQUIVALENCE_TOL", 1e-6))

# Experiment configuration
DEFAULT_N_TRAIN = int(os.getenv("NORMRECON_N_TRAIN", 50_000))
DEFAULT_N_TEST = int(os.getenv("NORMRECON_N_TEST", 50_000))

LOG_LEVEL = os.getenv("NORMRECON_LOG_LEVEL", "INFO")

# Sampling distributions
FROZEN_WEIGHT_RANGE = (-1.0, 1.0)
FROZEN_MEAN_RANGE = (-1.0, 1.0)
FROZEN_VARIANCE_RANGE = (0.5, 2.0)

TARGET_WEIGHT_RANGE = (-1.0, 1.0)
TARGET_SCALE_RANGE = (0.5, 1.5)
TARGET_SHIFT_RANGE = (-0.5, 0.5)

# Two-sided 95% normal quantile for Wilson intervals
WILSON_Z = 1.959963984540054

NETWORK_SCHEMA_VERSION = 1
