"""Named random substreams derived from one root seed.

Every stochastic component draws from its own stream so components can be
re-run in isolation and parallel work is order-independent: a stream is
identified by (root seed, stream id, *indices), e.g. the input spikes for
trial t of sample s come from stream("poisson", t, s).
"""

import numpy as np

STREAM_IDS = {
    "init": 1,       # weight initialization
    "shuffle": 2,    # epoch-level batch composition
    "augment": 3,    # random-crop offsets
    "train": 4,      # anything else the trainer needs
    "poisson": 5,    # input spike generation, indexed (trial, sample)
    "trial": 6,      # initial membrane potentials, indexed (trial,)
    "stopper": 7,    # linear-stopper training
}


def stream(root_seed, name, *indices) -> np.random.Generator:
    if name not in STREAM_IDS:
        raise KeyError(f"unknown stream name {name!r}")
    seq = np.random.SeedSequence([int(root_seed), STREAM_IDS[name],
                                  *[int(i) for i in indices]])
    return np.random.default_rng(seq)
