"""
Configuration settings for the dead leaves ideal observer
"""
import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Project paths
PROJECT_ROOT = Path(__file__).parent.parent
DATA_DIR = PROJECT_ROOT / "data"
FIXTURES_DIR = DATA_DIR / "fixtures"
SCHEMA_DIR = DATA_DIR / "schemas"
OUTPUT_DIR = Path(os.getenv("DEADLEAVES_OUTPUT_DIR", PROJECT_ROOT / "output"))

# Create directories if they don't exist
for dir_path in [OUTPUT_DIR]:
    dir_path.mkdir(parents=True, exist_ok=True)

# Radius law defaults (pixels)
R_MIN = 1.0
R_MAX = 2.0
SIDE = 500  # Side length of generated images

# Color / texture defaults
COLOR_LEVELS = 256  # Levels per channel for the uniform-discrete model
TEXTURE_HALFWIDTH = 10  # Texture offsets in [-10, 10] -> 21 levels
CHANNELS = 3

# Numerical tolerances
GEOM_EPS = 1e-9  # Distance ties at radius boundaries
MOD_TOL = 1e-10  # Remainders this close to the period wrap to zero
NEGATIVE_MASS_TOL = 1e-12
CLAUSEN_TERMS = 30  # Zeta-series terms, enough for 1e-15 on (-pi, pi]

# Limits
PARTITION_CAP = 12  # Largest pixel set the observer enumerates by default
MAX_LEAF_DRAWS = 10**7  # Safety cap per generated scene
MAX_TABLE_PIXELS = 20  # Leaf tables hold 2**n entries
LEAF_BATCH = 4096  # Leaves drawn per rng call in the generator

# Monte Carlo settings
MC_CHUNK_SIZE = 100_000  # Samples per rng stream; fixed so results don't depend on threads
MC_MAX_ROUNDS = 100_000  # Leaf draws per simulated partition before giving up

# Output settings
TOP_K = 15  # Rows in the posterior CSV
CSV_DIGITS = 6

# Concurrency
THREADS = int(os.getenv("DEADLEAVES_THREADS", "1"))
