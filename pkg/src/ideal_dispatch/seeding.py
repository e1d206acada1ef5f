"""Named sub-seeds derived from one run seed; no ambient entropy anywhere."""
import hashlib

import numpy as np


def sub_seed(seed: int, *names) -> int:
    key = ":".join([str(int(seed))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(sub_seed(seed, *names))
