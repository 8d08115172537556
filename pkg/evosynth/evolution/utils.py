import datetime
import hashlib
import json

import numpy as np

# integer keys used alongside the generation index when deriving seeds
INIT_KEY = 1_000_003
COLD_START_KEY = 1_000_033


def derive_seed(master_seed: int, *keys: int) -> int:
    """Mix a master seed with integer keys into a 32-bit seed.

    The mixing is numpy's SeedSequence, so derive_seed(s, g) is stable across
    platforms and numpy versions that keep the SeedSequence algorithm.
    """
    sequence = np.random.SeedSequence([int(master_seed), *[int(k) for k in keys]])
    return int(sequence.generate_state(1)[0])


def generation_seed(master_seed: int, generation: int) -> int:
    return derive_seed(master_seed, generation)


def timestamp() -> str:
    return datetime.datetime.now().replace(microsecond=0).isoformat()


def digest(obj) -> str:
    canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
