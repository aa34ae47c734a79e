import logging
import os
from pathlib import Path

from dimensionality_lab.core import logger

APP_VERSION = "1.0.0"

LOG_CONFIG_FILE = os.getenv("DIMLAB_LOG_CONFIG", "logging.yml")

DEFAULT_OUTPUT_DIR = os.getenv("DIMLAB_OUTPUT_DIR", "runs")

WORKERS = int(os.getenv("DIMLAB_WORKERS", 1))

MANIFEST_FILE = "manifest.json"

# CSV reals are written with this many significant digits
CSV_SIGNIFICANT_DIGITS = 12

# normalized eigenvalues below this are dropped from entropy sums
ZERO_EIGENVALUE_TOL = 1e-12

# eigenvalues below this fraction of the largest one are clamped to zero
EIGEN_CLAMP_RELATIVE = 1e-10

PSD_TOLERANCE = 1e-8
SYMMETRY_TOLERANCE = 1e-9
UNIT_DIAGONAL_TOLERANCE = 1e-9
L1_SUM_TOLERANCE = 1e-9

# ridge for the Gaussian closed forms is this fraction of each diagonal entry
RIDGE_SCALE = 1e-9
ENTROPY_RIDGE = 1e-12
SINGULAR_DETERMINANT_FLOOR = 1e-300
# conditional eigenvalues at or below this fraction of the unconditioned trace count as zero
SINGULAR_RELATIVE_FLOOR = 1e-12
SCHUR_AGREEMENT_RTOL = 1e-6
SCHUR_AGREEMENT_ATOL = 1e-9
# beyond this relative disagreement the two forms are treated as a numerical failure
SCHUR_FAILURE_RTOL = 1e-3

# regularized standard deviation epsilon of the variance term
VARIANCE_EPSILON = 1e-4


def validate_environment():
    """
    Check environment variables for validity and exit on errors
    """
    logger.channel("config").debug("Validating environment")

    # the log level must be one logging knows about
    if not isinstance(logging.getLevelName(logger.LOG_LEVEL), int):
        logger.channel("config").critical(f"Unknown log level: {logger.LOG_LEVEL}")
        exit(1)

    # worker pools need at least one thread
    if WORKERS < 1:
        logger.channel("config").critical(f"DIMLAB_WORKERS must be at least 1, got {WORKERS}")
        exit(1)

    logger.channel("config").debug("Environment is valid")


def validate_output_dir(output_dir: Path):
    """
    Create the output directory if needed and make sure it is writable
    """
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise PermissionError(f"Output directory cannot be created: {output_dir} ({e})") from e

    # check if output directory has correct permissions
    try:
        test_file = output_dir / ".write_test"
        with open(test_file, "w"):
            pass
        os.unlink(test_file)
    except OSError as e:
        raise PermissionError(f"Output directory is not writable: {output_dir}") from e
