"""Named, independent random number streams.

Every source of randomness (initial state, plant noise, measurement noise,
both mechanism noises and Monte Carlo sampling) draws from its own
counter-based `Philox` stream derived from a single integer seed. Streams are
identified by name, and can be split further into numbered sub-streams, e.g.
one per Monte Carlo shard.

"""

from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from detection_privacy.exceptions import DomainError

STREAM_IDS = {
    'x1': 0,
    't': 1,
    'w': 2,
    'v': 3,
    'j': 4,
    'mc': 5,
    'verify': 6,
}

# Monte Carlo draws are generated in shards of this size, each from its own
# sub-stream, so results do not depend on how many workers are used.
SHARD_SIZE = 65_536


def stream(seed: int, name: str, *substream: int) -> np.random.Generator:
    """Return the generator for the named stream of `seed`."""
    if name not in STREAM_IDS:
        raise KeyError(f'Unknown random stream: "{name}"')
    sequence = np.random.SeedSequence(
        int(seed), spawn_key=(STREAM_IDS[name], *substream)
    )
    return np.random.Generator(np.random.Philox(sequence))


def shard_sizes(samples: int) -> list[int]:
    """Split `samples` into consecutive shards of at most `SHARD_SIZE`."""
    full, remainder = divmod(int(samples), SHARD_SIZE)
    return [SHARD_SIZE] * full + ([remainder] if remainder else [])


def map_shards(
    function: Callable[[np.random.Generator, int], np.ndarray],
    samples: int,
    seed: int,
    name: str = 'mc',
    workers: int = 1,
    substream: tuple[int, ...] = (),
) -> np.ndarray:
    """Evaluate `function(generator, size)` on every shard and concatenate.

    Shard `i` always uses sub-stream `(*substream, i)` of the named stream, and
    shards are gathered in order.

    Raises:
        DomainError: `samples` is below one, which leaves nothing to
            concatenate.

    """
    if int(samples) < 1:
        raise DomainError(f'at least one sample is needed, got {samples}')

    sizes = shard_sizes(samples)
    jobs = [
        (stream(seed, name, *substream, index), size)
        for index, size in enumerate(sizes)
    ]

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(lambda job: function(*job), jobs))
    else:
        parts = [function(generator, size) for generator, size in jobs]

    return np.concatenate(parts, axis=0)
