# --- Centralized Configuration ---
# Defaults for every tunable of the library and the command-line harness.
# RunConfig (cli.py) reads these; a config file or CLI flags override them.

VERSION = "0.3.0"

# --- Numerics ---
# Jitter multipliers, scaled by mean(diag A), tried in order by cholesky_psd.
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)
SYMMETRY_RTOL = 1e-10
SINGULAR_DIAGONAL = 1e-300
VARIANCE_FLOOR = 1e-12

# --- Flow (SDE) ---
FLOW_TIME = 1.0
EM_STEPS = 20
TRAIN_SAMPLES = 1
EVAL_SAMPLES = 25
TEMPORAL_INDUCING = 3
STATE_BOUND = 1e6

# --- Kernels ---
LENGTHSCALE_INIT = 1.0
PREDICTOR_VARIANCE_INIT = 1.0
FIELD_VARIANCE_INIT = 0.01
TEMPORAL_VARIANCE_INIT = 1.0

# --- Variational initialization ---
FIELD_SQRT_SCALE = 1e-2
NOISE_VARIANCE_INIT = 0.1
N_QUAD = 20
KMEANS_ITERS = 10

# --- Training ---
INDUCING_POINTS = 100
LEARNING_RATE = 0.01
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8
TRAIN_ITERS = 10_000
WARMSTART_ITERS = 5_000
EVAL_EVERY = 100
MINIBATCH_SIZE = 512
# Datasets at or below this size train full-batch.
FULL_BATCH_LIMIT = 2_000
SEED = 0

# --- Data ---
TRAIN_FRACTION = 0.9
STEP_DEMO_POINTS = 100
STEP_DEMO_NOISE = 0.05
STEP_DEMO_REGIONS = 4
CURVE_POINTS = 200
STEP_DEMO_INDUCING = 25
STEP_DEMO_FLOW_TIME = 5.0
SWEEP_TIMES = (0.0, 1.0, 2.0, 5.0)

# --- Output ---
OUTPUT_DIR = "./runs/latest"
CHECKPOINT_FILE = "checkpoint.json"
THREADS_ENV = "DIFFGP_THREADS"
LOG_LEVEL = "INFO"
