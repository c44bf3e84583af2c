"""Counter-based random number kernel.

All sampling in the package is addressed by ``(seed, index, lane, block)``:
the draw for scenario ``index`` depends only on the seed and the index, never
on how many draws were requested before it or on how work is split across
workers.  ``lane`` separates logically independent substreams of the same
index (e.g. mixture-component selection vs. the Gaussian variate, or stage-1
vs. stage-2 of a two-stage estimator); ``block`` extends a lane when an index
needs more than two variates.

The kernel is Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy
as 1, 2, 3"), evaluated vectorized over the index axis.  numpy ships Philox
only as a sequential BitGenerator, which cannot produce one substream per
index without a Python-level object per draw; this module evaluates the same
family directly on counter arrays.  ``test_rng.py`` pins the Random123
known-answer vectors.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_KEY_BUMP0 = 0x9E3779B9
_KEY_BUMP1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_ROUNDS = 10

# lane reserved for deriving child seeds; samplers must not use it
_DERIVE_LANE = 0xFFFFFFFF

SEED_MAX = 2**64 - 1


def check_seed(seed: int) -> int:
    """Validate and return a 64-bit unsigned seed."""
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def philox4x32(c0, c1, c2, c3, key0: int, key1: int):
    """One Philox4x32-10 block per counter: four uint32 words out.

    Counter words are broadcastable uint32 arrays; the key is a pair of
    uint32 scalars.
    """
    c0 = np.asarray(c0, dtype=np.uint32)
    c1 = np.asarray(c1, dtype=np.uint32)
    c2 = np.asarray(c2, dtype=np.uint32)
    c3 = np.asarray(c3, dtype=np.uint32)
    k0 = int(key0) & 0xFFFFFFFF
    k1 = int(key1) & 0xFFFFFFFF
    for _ in range(_ROUNDS):
        p0 = _M0 * c0.astype(np.uint64)
        p1 = _M1 * c2.astype(np.uint64)
        hi0 = (p0 >> np.uint64(32)).astype(np.uint32)
        lo0 = (p0 & _MASK32).astype(np.uint32)
        hi1 = (p1 >> np.uint64(32)).astype(np.uint32)
        lo1 = (p1 & _MASK32).astype(np.uint32)
        c0 = hi1 ^ c1 ^ np.uint32(k0)
        c1 = lo1
        c2 = hi0 ^ c3 ^ np.uint32(k1)
        c3 = lo0
        k0 = (k0 + _KEY_BUMP0) & 0xFFFFFFFF
        k1 = (k1 + _KEY_BUMP1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def _to_unit(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    """Two uint32 words -> one double strictly inside (0, 1)."""
    bits = (hi.astype(np.uint64) << np.uint64(32)) | lo.astype(np.uint64)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


# chunk size for the vectorized kernel: large enough to amortize dispatch,
# small enough that round temporaries stay in the allocator's reuse pools
# (giant temporaries degrade into per-op page faulting)
_CHUNK = 1 << 20


def uniforms(seed: int, indices, lane: int, width: int = 1) -> np.ndarray:
    """Uniform(0,1) variates for each index, shape ``(len(indices), width)``.

    Deterministic in (seed, index, lane, column): requesting a prefix, a
    suffix, or any partition of the index range yields the same values.
    """
    seed = check_seed(seed)
    lane = int(lane)
    if not 0 <= lane < _DERIVE_LANE:
        raise ValueError(f"lane out of range: {lane}")
    idx = np.asarray(indices, dtype=np.uint64)
    c2 = np.uint32(lane)
    k0 = seed & 0xFFFFFFFF
    k1 = seed >> 32
    nblocks = (width + 1) // 2
    n = idx.shape[0]
    out = np.empty((n, width))
    for start in range(0, n, _CHUNK):
        chunk = idx[start : start + _CHUNK]
        c0 = (chunk & _MASK32).astype(np.uint32)
        c1 = (chunk >> np.uint64(32)).astype(np.uint32)
        for block in range(nblocks):
            o0, o1, o2, o3 = philox4x32(c0, c1, c2, np.uint32(block), k0, k1)
            out[start : start + _CHUNK, 2 * block] = _to_unit(o0, o1)
            if 2 * block + 1 < width:
                out[start : start + _CHUNK, 2 * block + 1] = _to_unit(o2, o3)
    return out


def derive_seed(seed: int, tag: int) -> int:
    """Child seed for an auxiliary stream, e.g. one per mixture component."""
    seed = check_seed(seed)
    tag = int(tag)
    o0, o1, _, _ = philox4x32(
        np.uint32(tag & 0xFFFFFFFF),
        np.uint32((tag >> 32) & 0xFFFFFFFF),
        np.uint32(_DERIVE_LANE),
        np.uint32(0),
        seed & 0xFFFFFFFF,
        seed >> 32,
    )
    return int((np.uint64(o0) << np.uint64(32)) | np.uint64(o1))
