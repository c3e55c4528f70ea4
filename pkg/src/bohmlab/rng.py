"""Counter-based random streams (Philox4x32-10).

Every random number in bohmlab is a pure function of
``(master_seed, stream_id, draw_index)``.  The 64-bit master seed is the
Philox key, and the 128-bit counter holds the stream id in its low half and
the draw-block index in its high half.  Each Philox block yields 128 bits,
i.e. two doubles with 53 random bits each.

Because nothing is stateful, trajectory ``i`` of an ensemble draws the same
numbers whether it is processed alone, in a batch of ten thousand, or on a
different worker.  The generator is the one from Salmon et al. (SC'11,
Random123) and matches its published known-answer vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "philox4x32",
    "splitmix64",
    "derive_stream_id",
    "RngStream",
    "stream_uniforms",
]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_U64 = 0xFFFFFFFFFFFFFFFF


def philox4x32(counter, key, rounds: int = 10):
    """Vectorized Philox4x32 block function.

    Parameters
    ----------
    counter : sequence of four uint32-valued arrays (broadcastable)
    key : sequence of two uint32-valued arrays (broadcastable)

    Returns
    -------
    tuple of four uint64 arrays holding 32-bit outputs.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & _MASK32 for k in key)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
    return c0, c1, c2, c3


def splitmix64(x: int) -> int:
    """One SplitMix64 output for the 64-bit input ``x``."""
    z = (x + 0x9E3779B97F4A7C15) & _U64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return z ^ (z >> 31)


def derive_stream_id(master_seed: int, index: int) -> int:
    """Stream id for trajectory ``index`` under ``master_seed``."""
    return splitmix64((splitmix64(master_seed & _U64) ^ (index & _U64)) & _U64)


def _split64(value):
    v = np.asarray(value, dtype=np.uint64)
    return v & _MASK32, v >> _SHIFT32


def _to_unit(hi, lo):
    bits = ((hi << _SHIFT32) | lo) >> np.uint64(11)
    return bits.astype(np.float64) * (1.0 / 9007199254740992.0)


def stream_uniforms(master_seed: int, stream_ids, first: int, count: int) -> np.ndarray:
    """Uniform doubles in [0, 1) for many streams at once.

    Row ``i`` holds draws ``first .. first+count-1`` of stream
    ``stream_ids[i]``.  Draw ``n`` is half ``n % 2`` of Philox block ``n // 2``.
    """
    ids = np.atleast_1d(np.asarray(stream_ids, dtype=np.uint64))
    if count <= 0:
        return np.zeros((ids.size, 0))
    draws = np.arange(first, first + count, dtype=np.uint64)
    blocks = draws >> np.uint64(1)
    halves = (draws & np.uint64(1)).astype(bool)
    id_lo, id_hi = _split64(ids[:, None])
    blk_lo, blk_hi = _split64(blocks[None, :])
    key_lo, key_hi = _split64(np.uint64(master_seed & _U64))
    r0, r1, r2, r3 = philox4x32((id_lo, id_hi, blk_lo, blk_hi), (key_lo, key_hi))
    first_half = _to_unit(r0, r1)
    second_half = _to_unit(r2, r3)
    return np.where(halves[None, :], second_half, first_half)


@dataclass(frozen=True)
class RngStream:
    """One reproducible stream of uniforms; cheap to create and to copy."""

    master_seed: int
    stream_id: int

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= int(value) <= _U64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer")

    @classmethod
    def for_trajectory(cls, master_seed: int, index: int) -> "RngStream":
        return cls(master_seed, derive_stream_id(master_seed, index))

    def uniforms(self, count: int, first: int = 0) -> np.ndarray:
        return stream_uniforms(self.master_seed, [self.stream_id], first, count)[0]

    def child(self, index: int) -> "RngStream":
        """Independent sub-stream, e.g. the ``index``-th trajectory of an ensemble."""
        return RngStream(self.master_seed, derive_stream_id(self.stream_id, index))

    def child_ids(self, count: int) -> np.ndarray:
        return np.array(
            [derive_stream_id(self.stream_id, i) for i in range(count)], dtype=np.uint64
        )
