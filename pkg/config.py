import os

# config.py - Central configuration for the argpipe pipeline

# ── Corpus ────────────────────────────────────────────────────────────────────
SPLIT_RATIOS = (0.8, 0.1, 0.1)   # train / validation / test
DEFAULT_SEED = 7

# ── Segmentation (C99) ───────────────────────────────────────────────────────
RANK_MASK_SIZE      = 11
C99_THRESHOLD_C     = 1.2
EMBEDDING_DIM       = 512

# ── Labeler ──────────────────────────────────────────────────────────────────
TRAIN_EPOCHS        = 300
TRAIN_LEARNING_RATE = 0.5
TRAIN_L2            = 1e-4
DECISION_THRESHOLD  = 0.5

# ── Summarizer ───────────────────────────────────────────────────────────────
PROMPT_SUFFIX = "\nTL;DR"
PART_SEPARATOR = " "

# Per-profile budgets, context windows and prices (USD per 1,000 tokens).
PROFILES = {
    "small": {
        "budget_tokens":     2500,
        "context_tokens":    4097,
        "prompt_price":      0.02,
        "completion_price":  0.02,
        "max_tokens_grid":   (32, 64, 128),
    },
    "large": {
        "budget_tokens":     7500,
        "context_tokens":    8192,
        "prompt_price":      0.03,
        "completion_price":  0.06,
        "max_tokens_grid":   (128, 256, 512),
    },
}
DEFAULT_PROFILE = "small"
TEMPERATURE_GRID = (0.0, 0.3, 0.5, 0.8)

# ── Remote providers ─────────────────────────────────────────────────────────
# Name of the variable holding the API key, not the key itself.
API_KEY_ENV      = os.getenv("ARGPIPE_API_KEY_ENV", "ARGPIPE_API_KEY")
PROVIDER_URL     = os.getenv("ARGPIPE_ENDPOINT", "http://127.0.0.1:8765")
REQUEST_TIMEOUT  = float(os.getenv("ARGPIPE_TIMEOUT", 60))
RETRY_ATTEMPTS   = int(os.getenv("ARGPIPE_RETRY_ATTEMPTS", 5))
RETRY_INITIAL_S  = 1.0
MAX_IN_FLIGHT    = int(os.getenv("ARGPIPE_MAX_IN_FLIGHT", 4))

# ── Mock HTTP service ────────────────────────────────────────────────────────
MOCK_HOST = os.getenv("ARGPIPE_MOCK_HOST", "127.0.0.1")
MOCK_PORT = int(os.getenv("ARGPIPE_MOCK_PORT", 8765))

# ── Output ───────────────────────────────────────────────────────────────────
OUTPUT_DIR = os.getenv("ARGPIPE_OUT_DIR", "out")
LOG_LEVEL  = os.getenv("ARGPIPE_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s  [%(levelname)s]  %(name)s — %(message)s"
