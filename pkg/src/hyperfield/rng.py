"""Seed derivation for named randomness streams.

All randomness in a run flows from one master seed. Each consumer
(data generation, parameter init, training, sampling) derives its own
stream so that adding draws in one place never shifts another.
"""

import hashlib

import numpy as np
import torch


def derive_seed(master: int, stream: str) -> int:
    """Stable 63-bit seed for a named sub-stream of ``master``."""
    digest = hashlib.sha256(f"{master}:{stream}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def torch_generator(master: int, stream: str) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(master, stream))
    return gen


def numpy_generator(master: int, stream: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, stream)))
