"""Reproducible per-trajectory random streams.

Each trajectory owns an independent counter-based generator so that Monte
Carlo batches can be dispatched to workers in any order (or vectorized in
lockstep) and still produce records that depend only on (seed, traj_id).

The stream is numpy's Philox (4x64) with the 128-bit key holding the global
seed in the high word and the trajectory id in the low word.

Draw-order contract (what a runner consumes from a trajectory's stream), in
blocks of NOISE_BLOCK steps:
  * diffusive runs:         standard_normal((block, n_diffusive_channels))
  * jump / discrete runs:   random((block,))
  * meter runs:             random((block,)) then standard_normal((block,))
  * mixed runs:             random((block,)) then standard_normal((block, n_channels))
The block length is a fixed algorithm constant (it defines the interleaving of
uniform and normal draws for meter/mixed models); records are therefore
identical for any trajectory count, chunking, or thread count.  Exact-mode
diffusive sampling instead consumes unblocked per-attempt (proposal, uniform)
pairs from each lane's stream.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "philox4x64(key = seed<<64 | traj_id)"

# Fixed step-block length for noise pre-draws; see module docstring.
NOISE_BLOCK = 256

_MASK64 = (1 << 64) - 1


def trajectory_rng(seed: int, traj_id: int) -> np.random.Generator:
    """Counter-based generator for one trajectory, derived from (seed, traj_id)."""
    if seed < 0 or traj_id < 0:
        raise ValueError("seed and traj_id must be non-negative")
    key = ((seed & _MASK64) << 64) | (traj_id & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def trajectory_rngs(seed: int, traj_ids) -> list[np.random.Generator]:
    return [trajectory_rng(seed, t) for t in traj_ids]
