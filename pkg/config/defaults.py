"""Training recipe and experiment grid defaults.

Only values taken from the published training recipe live here; every other
experiment setting must be spelled out in the experiment config file.
"""

from __future__ import annotations

# SGD recipe: lr halved every two epochs, one local epoch per federated round.
LR0 = 0.1
MOMENTUM = 0.9
WEIGHT_DECAY = 1e-4
HALVE_EVERY = 2
ROUNDS = 20
LOCAL_EPOCHS_PER_ROUND = 1

# Strategy defaults (best pair found on validation sets, and the selected FedProx mu).
FDR = 0.3
CDR = 0.2
PROX_MU = 0.01

# Hyperparameter grids searched on validation loss.
CDR_GRID = (0.0, 0.1, 0.2, 0.4)
FDR_GRID = (0.0, 0.1, 0.2, 0.3, 0.4)
PROX_MU_GRID = (0.5, 0.1, 0.01, 0.001)

# Patient-wise train/val/test fractions.
SPLIT_FRACTIONS = (0.5, 0.1, 0.4)

# Centers contributing fewer patients are excluded from the federation.
MIN_PATIENTS_PER_CENTER = 5

F1_THRESHOLD = 0.5
