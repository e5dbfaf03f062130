"""Shared generators for randomized test cases.

Weights are kept bounded away from zero so difference quotients never lose
digits to a vanishing p_i; atom positions stay in a modest box so polynomial
functionals keep O(1) values.
"""

import numpy as np

from lionsderiv import make_measure, make_sample


def random_measure(rng, max_atoms=16, lo=-2.0, hi=2.0, min_sep=1e-3):
    """Random canonical measure with well-separated atoms and fat weights."""
    n = int(rng.integers(2, max_atoms + 1))
    atoms = np.sort(rng.uniform(lo, hi, size=n))
    while np.any(np.diff(atoms) < min_sep):
        atoms = np.sort(rng.uniform(lo, hi, size=n))
    raw = rng.uniform(0.2, 1.0, size=n)
    return make_measure(atoms, raw / raw.sum())


def random_sample(rng, size=64, lo=0.0, hi=1.0, weighted=False):
    values = rng.uniform(lo, hi, size=size)
    if not weighted:
        return make_sample(values)
    raw = rng.uniform(0.2, 1.0, size=size)
    return make_sample(values, raw / raw.sum())
