import hashlib

import numpy as np

_SEED_MASK = (1 << 63) - 1


def derive_seed(seed: int, stage: str) -> int:
    """Stage seed: first 8 bytes of SHA-256("{stage}:{seed}"), masked to 63 bits."""
    digest = hashlib.sha256(f"{stage}:{seed}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & _SEED_MASK


def make_rng(seed: int) -> np.random.Generator:
    # PCG64 streams are identical across platforms for the same seed
    return np.random.Generator(np.random.PCG64(seed))


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    return make_rng(derive_seed(seed, stage))
