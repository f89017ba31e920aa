"""Counter-based uniform streams.

Every random stream in the package (one per death site, per directed edge,
per percolation site, ...) is a SplitMix64 sequence whose starting state is a
hash of ``(seed, tag, a, b)``.  Draw ``k`` of a stream is therefore a pure
function of its key and ``k``, so a stream's values do not depend on which
other streams were generated.  That is what makes logs nested under window
enlargement.
"""
import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0

# stream tags
TAG_DEATH = 1
TAG_ARROW = 2
TAG_MARK = 3
TAG_SITE = 4
TAG_ETA = 5


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def stream_key(seed, tag, a, b):
    h = mix64(np.uint64(seed) + GOLDEN * np.uint64(tag))
    h = mix64(h ^ (np.uint64(np.int64(a)) + GOLDEN))
    h = mix64(h ^ (np.uint64(np.int64(b)) + GOLDEN * np.uint64(2)))
    return h


@njit(cache=True, inline="always")
def uniform(key, k):
    """Draw ``k`` (0-based) of the stream ``key``, uniform on [0, 1)."""
    z = mix64(key + GOLDEN * np.uint64(k + 1))
    return np.float64(z >> np.uint64(11)) * _INV53


def replica_seed(master_seed: int, index: int, stream: int = 0) -> int:
    """64-bit seed of replica ``index``; independent of the replica count.

    ``stream`` > 0 gives disjoint families (pilot runs and the like).
    """
    key = [int(master_seed), int(index)] + ([int(stream)] if stream else [])
    ss = np.random.SeedSequence(key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])
