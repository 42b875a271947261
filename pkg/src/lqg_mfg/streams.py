"""Independent, order-free random streams keyed by integers.

Every replication draws from ``Philox`` seeded by
``SeedSequence(master_seed, spawn_key=key)``, so the stream of a task
depends only on its key and never on scheduling.
"""

from __future__ import annotations

import numpy as np

# first key component per consumer
Q1_MC = 1
CROSS_SECTION = 2  # shared by the fixed-time and sup-over-time studies
IID = 4
COMMON_NOISE = 5
NASH = 6
DELTA = 7
FIXED_POINT = 8
REFERENCE = 9
BOOTSTRAP = 10
Q1_VALIDATION = 11


def stream(master_seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def seed_record(master_seed: int, *key: int) -> dict:
    return {"master_seed": int(master_seed), "spawn_key": [int(k) for k in key], "bit_generator": "Philox"}
