"""Deterministic fan-out of one master seed into named sub-streams.

Every source of randomness in a run (data synthesis, measurement noise,
network init, exploration, minibatch sampling) draws from its own named
stream so that adding a consumer never perturbs the others.
"""
from __future__ import annotations

import zlib

import numpy as np

# Canonical stream names used across the pipeline.
STREAMS = (
    "synth",
    "env-noise",
    "agent-init",
    "agent-explore",
    "nilm-init",
    "nilm-batch",
)


def substream(master_seed: int, name: str) -> np.random.Generator:
    """Return an independent generator derived from (master_seed, name)."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), tag]))


def derived_seed(master_seed: int, name: str) -> int:
    """A 63-bit integer seed for libraries that want a plain int (torch)."""
    return int(substream(master_seed, name).integers(0, 2**63 - 1))
