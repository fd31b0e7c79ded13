from importlib_metadata import version

# Library
SDK_NAME = "hyperfedsim"
SDK_VERSION = version("HyperFedSim")
CHECKPOINT_FORMAT_VERSION = "1.0.0"
REQUEST_TIMEOUT = 30
REQUEST_RETRIES = 3
DATA_DIR_ENV = "HYPERFEDSIM_DATA_DIR"

# =Client training=
LOCAL_EPOCHS = 2
CLIENT_LR = 1e-3
CLIENT_MOMENTUM = 0.9
CLIENT_WEIGHT_DECAY = 1e-4
BATCH_SIZE = 64
TRAIN_FRACTION = 0.75

# =Hypernetwork=
HYPERNET_LR = 2e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
EMBEDDING_DIM = 64
HIDDEN_DIM = 100
HIDDEN_LAYERS = 3
OUTPUT_DIM = 3072
GROUPING_MODES = ("tau", "exact", "client")

# =Batch normalization=
BN_MOMENTUM = 0.1
BN_EPS = 1e-5

# =Rounds=
ROUNDS = 500
PARTICIPATION = 1.0
EVAL_EVERY = 1
CHECKPOINT_EVERY = 10
HOLDOUT_FRACTION = 0.2

# Distillation temperature and lambda (weight on cross-entropy) per dataset.
DISTILLATION_DEFAULTS = {
    "cifar100": {"temperature": 15.0, "lam": 0.99},
    "cifar10": {"temperature": 15.0, "lam": 0.99},
    "tinyimagenet": {"temperature": 24.0, "lam": 0.8},
    "emnist": {"temperature": 10.0, "lam": 0.9},
    "blobs": {"temperature": 15.0, "lam": 0.999},
}

# Communication accounting
VALUE_BYTES = 4
INDEX_BYTES = 4

# Metrics
METRICS_HEADER = (
    "round",
    "phase",
    "client_id",
    "accuracy",
    "loss",
    "uplink_bytes",
    "downlink_bytes",
)
PHASE_TRAIN = "train"
PHASE_GLOBAL = "global"
PHASE_EVAL = "eval"
PHASE_EVAL_TRAIN = "eval-train"
PHASE_EVAL_HELDOUT = "eval-heldout"
MEAN_ROW_ID = "mean"

# Artifact names
METRICS_FILE = "metrics.csv"
RESOLVED_CONFIG_FILE = "resolved_config.json"
PLAN_FILE = "plan.json"
CHECKPOINT_DIR = "checkpoint"

# Checkpoint keys
CKPT_FORMAT = "format_version"
CKPT_CONFIG = "config"
CKPT_ROUND = "completed_round"
CKPT_HYPERNET = "hypernet_state"
CKPT_RUNNER = "runner_state"
CKPT_METRIC_ROWS = "metric_rows"
