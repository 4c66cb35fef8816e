"""Named random streams derived from a single integer seed.

Each consumer (parameter init, data order, latent draws, ...) asks for its
own stream by name so that adding draws in one place never shifts another.
"""
import zlib

import numpy as np


def stream_seed(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])


def rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, name))


def int_seed(seed: int, name: str) -> int:
    return int(stream_seed(seed, name).generate_state(1, np.uint32)[0])
