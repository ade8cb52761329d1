"""Deterministic random-stream derivation.

All randomness in an experiment flows from one root seed; named substreams
keep the stages (dataset, training, attack, evaluation) independent so that
changing one stage's draw count never perturbs another.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *names: str) -> np.random.Generator:
    """Child generator derived from (seed, names) - stable across runs and platforms."""
    key = tuple(zlib.crc32(n.encode("utf-8")) for n in names)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))
