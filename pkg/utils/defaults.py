"""Numeric defaults used across ssm-surgeon.

Calibration and allocation values follow the published hyperparameter
conventions; the rest are desk-scale choices.
"""

# Calibration
NSAMPLES = 64
SEQLEN = 64
SEED = 0

# Sensitivity-aware FFN allocation
ALPHA = 0.04

# OBS pruning
BLOCKSIZE = 16
PERCDAMP = 0.01
MAX_DAMP_RETRIES = 8

# Forward pass
RMS_EPS = 1e-5
EXP_CLAMP_MIN = -60.0
EXP_CLAMP_MAX = 0.0
A_LOG_MAX = 80.0

# Oracles
FD_STEP = 1e-4
EXHAUSTIVE_MAX_ENTRIES = 16

# Reports
FLOAT_DIGITS = 17
