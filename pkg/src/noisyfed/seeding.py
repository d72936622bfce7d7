"""Deterministic, collision-free random streams.

Every stochastic component of a run draws from its own generator, derived
from ``(master seed, domain, client, round)``.  Client and round streams are
therefore independent of execution order and of which clients happen to be
sampled, which is what makes the all-clients-train / sampled-clients-train
equivalence exact and lets replicas run in parallel without shared state.
"""

import numpy as np

# Stream domains.  Values are part of the determinism contract: changing them
# changes every trace.
DOMAIN_SAMPLING = 0
DOMAIN_INIT = 1
DOMAIN_DOWNLINK = 2
DOMAIN_BATCH = 3
DOMAIN_UPLINK = 4
DOMAIN_FADE_UPLINK = 5
DOMAIN_FADE_DOWNLINK = 6
DOMAIN_ORACLE = 7


def stream(master_seed, domain, client=0, round_index=0):
    """Return the generator owned by (domain, client, round) under a master seed."""
    if master_seed < 0 or domain < 0 or client < 0 or round_index < 0:
        raise ValueError("seed components must be non-negative")
    seq = np.random.SeedSequence(entropy=master_seed,
                                 spawn_key=(domain, client, round_index))
    return np.random.default_rng(seq)
