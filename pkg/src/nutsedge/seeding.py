"""Stage-local random streams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def stage_rng(seed: int, stage: str, index: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stage, index)``.

    The stage name is folded in through CRC32 so streams are stable across
    processes and Python versions (``hash()`` on str is salted).
    """
    key = zlib.crc32(stage.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key, int(index)]))


def stage_seed(seed: int, stage: str, index: int = 0) -> int:
    """Integer seed for APIs that take one, drawn from :func:`stage_rng`."""
    return int(stage_rng(seed, stage, index).integers(0, 2 ** 31 - 1))
