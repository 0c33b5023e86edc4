"""
Configuration file for the FedIN federated simulator
"""
import os
from pathlib import Path

# Application Info
APP_NAME = "FedIN Simulator"
APP_VERSION = "1.0.0"

# Paths
BASE_DIR = Path(__file__).parent
DEFAULT_OUTPUT_PATH = Path(os.environ.get("FEDIN_HOME", "fedin_runs"))
RESULTS_PATH = DEFAULT_OUTPUT_PATH / "results"
DATABASE_PATH = DEFAULT_OUTPUT_PATH / "run_registry.db"
LOG_PATH = DEFAULT_OUTPUT_PATH / "logs"

# Run modes
MODE_FEDIN = "fedin"
MODE_IGNORE_DIVERGENCE = "fedin_ignore_divergence"
MODE_NO_AGGREGATION = "fedin_no_aggregation"
MODE_NO_IN = "fedin_no_in"
MODE_FEDAVG = "fedavg"
RUN_MODES = (MODE_FEDIN, MODE_IGNORE_DIVERGENCE, MODE_NO_AGGREGATION, MODE_NO_IN, MODE_FEDAVG)

# Model architecture
VARIANTS = ("A", "B", "C", "D", "E")
VARIANT_DEPTHS = {"A": 6, "B": 3, "C": 5, "D": 4, "E": 3}
FEDAVG_VARIANT = "A"
DEFAULT_MODEL_KIND = "mlp"  # or "conv"
DEFAULT_FEATURE_DIM_IN = 64
DEFAULT_FEATURE_DIM_OUT = 64
DEFAULT_HIDDEN_DIM = 64
CONV_EXTRACTOR_CHANNELS = 8
CONV_INTERMEDIATE_CHANNELS = 16
CONV_KERNEL_SIZE = 3

# Synthetic data
DEFAULT_SYNTH_SAMPLES = 5000
DEFAULT_SYNTH_TEST_SAMPLES = 1000
DEFAULT_SYNTH_CLASSES = 10
DEFAULT_SYNTH_DIM = 32
DEFAULT_SYNTH_SPREAD = 1.0
SYNTH_MEAN_RADIUS = 4.0

# IDX files
IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# Partitioning
DEFAULT_NUM_CLIENTS = 10
DEFAULT_PARTITION_KIND = "dirichlet"
DEFAULT_DIRICHLET_ALPHA = 0.5

# Training
DEFAULT_NUM_ROUNDS = 60
DEFAULT_INNER_EPOCHS = 1
DEFAULT_BATCH_SIZE = 32
DEFAULT_LEARNING_RATE = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_SEED = 0

# Gradient divergence
DEFAULT_LAMBDA = 2.0
DEFAULT_RESOLVER = "simplified"  # or "analytic"
RESOLVERS = ("simplified", "analytic")

# Feature exchange
DEFAULT_SAMPLE_SIZE = 512
DEFAULT_STORE_CAPACITY = 1024
DEFAULT_UPLOAD_CAP = 256
DEFAULT_EXCLUDE_SELF = False

# Aggregation / evaluation
DEFAULT_AGGREGATION = "uniform"  # or "samples"
AGGREGATIONS = ("uniform", "samples")
DEFAULT_EVAL_MODE = "global"  # or "local"
EVAL_MODES = ("global", "local")

# Default variant assignment for 10 clients: A x2, B x1, C x2, D x2, E x3
DEFAULT_VARIANT_ASSIGNMENT = ("A", "A", "B", "C", "C", "D", "D", "E", "E", "E")

# Performance
THREADS_ENV_VAR = "FEDIN_THREADS"

# Metrics
CSV_WALLCLOCK = False  # elapsed_seconds column is zeroed unless enabled
COMPARE_TAIL_ROUNDS = 10

# Gradient self-check tolerances
FD_TOLERANCE_FLOAT32 = 1e-4
FD_TOLERANCE_FLOAT64 = 1e-6
ORACLE_TOLERANCE = 1e-6
DUALITY_TOLERANCE = 1e-8

# Logging
LOG_LEVEL = "INFO"  # DEBUG, INFO, WARNING, ERROR
MAX_LOG_SIZE_MB = 10
LOG_BACKUP_COUNT = 5
LOG_FILE_NAME = "fedin.log"
LOG_FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_CONSOLE_FORMAT = "%(levelname)s: %(message)s"


def create_directories(base: Path = DEFAULT_OUTPUT_PATH):
    """Create output directories if they don't exist"""
    directories = [
        base,
        base / "results",
        base / "logs",
    ]
    for directory in directories:
        directory.mkdir(parents=True, exist_ok=True)


def default_variant_assignment(num_clients: int) -> dict:
    """Map client ids to variants, cycling the default 10-client layout"""
    return {
        client_id: DEFAULT_VARIANT_ASSIGNMENT[client_id % len(DEFAULT_VARIANT_ASSIGNMENT)]
        for client_id in range(num_clients)
    }


def thread_count() -> int:
    """Worker threads for client rounds, from the environment or physical cores"""
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw:
        return max(1, int(raw))
    import psutil
    return psutil.cpu_count(logical=False) or 1
