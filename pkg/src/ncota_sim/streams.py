"""Counter-based random streams keyed by structured tuples.

Every random quantity in the simulator (fading, receiver noise, dither,
link outages, data synthesis, node placement) is drawn from its own
Philox generator whose key hashes a tuple such as

    (seed, grid_index, trial, frame, node, FADING)

Identical keys always give identical draws, so trajectories are
reproducible bit for bit no matter how trials are scheduled across
workers or in what order nodes are processed.
"""

import hashlib
import threading

import numpy as np

# Source kinds appended as the last element of a stream key.
FADING = 0      # complex channel gains seen by one receiver in one frame
NOISE = 1       # receiver thermal noise for one frame
QUANTIZE = 2    # dither draws of one transmitting node in one frame
LINK = 3        # per-link outage fading for digital payloads
DATA = 4        # dataset synthesis
DEPLOY = 5      # node placement
SLOTS = 6       # half-duplex slot assignment


def stream(*key) -> np.random.Generator:
    """Return the Philox generator addressed by ``key``.

    The key may mix ints and short strings; it is hashed to 128 bits and
    used as the Philox key, which indexes one of 2**128 independent
    counter-based streams.
    """
    digest = hashlib.blake2b(repr(key).encode("utf-8"), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


_local = threading.local()


def scratch_stream(*key) -> np.random.Generator:
    """Rekey a thread-local generator to ``key`` and return it.

    Draw-for-draw identical to ``stream(*key)`` but several times cheaper,
    because the Philox bit generator is reused instead of reconstructed;
    the per-frame simulation loops call this tens of thousands of times.
    The returned generator is shared within the calling thread, so it is
    only valid until the next ``scratch_stream`` call on the same thread.
    """
    try:
        bg, gen, state = _local.scratch
    except AttributeError:
        bg = np.random.Philox(key=0)
        gen = np.random.Generator(bg)
        state = bg.state
        _local.scratch = (bg, gen, state)
    digest = hashlib.blake2b(repr(key).encode("utf-8"), digest_size=16).digest()
    state["state"]["key"] = np.frombuffer(digest, dtype=np.uint64)
    state["state"]["counter"] = np.zeros(4, dtype=np.uint64)
    state["buffer_pos"] = 4
    state["has_uint32"] = 0
    bg.state = state
    return gen


def complex_normal(rng: np.random.Generator, variance, size) -> np.ndarray:
    """Draw circularly symmetric complex normals CN(0, variance).

    ``variance`` is the total (real plus imaginary) second moment; it may
    be a scalar or an array broadcastable to ``size``.
    """
    g = rng.standard_normal((2,) + tuple(np.atleast_1d(size)))
    return np.sqrt(np.asarray(variance, dtype=float) / 2.0) * (g[0] + 1j * g[1])
