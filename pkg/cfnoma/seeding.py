"""Named, independent random substreams derived from one root seed."""
import numpy as np


STREAMS = {
    "deployment": 0,
    "shadowing": 1,
    "clustering-baseline": 2,
    "montecarlo": 3,
}


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    if name not in STREAMS:
        raise KeyError(f"unknown random stream: {name}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name], *map(int, keys)))
    return np.random.default_rng(seq)
