"""Deterministic stream derivation for experiments.

Every random draw in the lab comes from a numpy Philox generator (a named
counter-based PRNG) keyed by blake2b(run_seed, stream_label, index). Distinct
labels give independent streams; the same triple always reproduces the same
stream, on any platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(run_seed, label, index=0):
    """128-bit Philox key derived from the (run_seed, label, index) triple."""
    h = hashlib.blake2b(f"{run_seed}|{label}|{index}".encode(), digest_size=16)
    return int.from_bytes(h.digest(), "little")


def seeded_rng(run_seed, label, index=0):
    """Deterministic generator for one named stream of one run."""
    return np.random.Generator(np.random.Philox(key=stream_key(run_seed, label, index)))


def derive_seed(run_seed, label, index=0):
    """64-bit sub-seed for handing to pure generator functions."""
    return stream_key(run_seed, label, index) & 0xFFFFFFFFFFFFFFFF
