"""Named random substreams derived from one top-level seed."""

import zlib

import numpy as np

STREAMS = ("init", "shuffle", "dropout", "synth")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named use of the top-level seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])
