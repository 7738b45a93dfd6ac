# -*- encoding: utf-8 -*-

import numpy as np


# Python integers are unbounded, so every 64-bit operation is masked explicitly

def to_uint64(x: int) -> int:
    """Clip an integer so that it occupies 64 bits"""
    return x & 0xffffffffffffffff


def splitmix64(state: int) -> int:
    """Return the next output of a SplitMix64 generator whose state is `state`"""
    z = to_uint64(state + 0x9e3779b97f4a7c15)
    z = to_uint64((z ^ (z >> 30)) * 0xbf58476d1ce4e5b9)
    z = to_uint64((z ^ (z >> 27)) * 0x94d049bb133111eb)
    return z ^ (z >> 31)


def derive_seed(base_seed: int, *indices: int) -> int:
    """Hash a base seed and a sequence of integer indices into a new 64-bit seed

    Two different index tuples give statistically independent seeds, so that each
    trace, split or training run can draw from its own stream without coordination."""
    state = splitmix64(to_uint64(base_seed))
    for idx in indices:
        state = splitmix64(to_uint64(state ^ to_uint64(idx)))
    return state


def make_rng(seed: int) -> np.random.Generator:
    """Return a numpy generator driven by a PCG64 bit stream seeded with `seed`"""
    return np.random.Generator(np.random.PCG64(to_uint64(seed)))
