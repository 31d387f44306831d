"""Random samples from elliptical distributions.

All randomness goes through ``numpy.random.Generator(Philox(seed))`` so that
output is reproducible across platforms for a given seed.
"""

import numpy as np

from .exceptions import InputError
from .spd import as_spd

DISTRIBUTIONS = ("gaussian", "cauchy", "tdist")


def make_rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def sample_elliptical(sigma, n, distribution="cauchy", nu=None, rng=None):
    """Draw ``n`` points ``x = S^{1/2} z / r``.

    ``z`` is standard normal; ``r`` is 1 (gaussian), ``|w|`` with standard
    normal ``w`` (cauchy) or ``sqrt(chi2_nu / nu)`` (tdist).
    """
    if distribution not in DISTRIBUTIONS:
        raise InputError(f"unknown distribution {distribution!r}")
    if int(n) != n or n < 1:
        raise InputError("n must be a positive integer")
    sigma = as_spd(sigma)
    rng = rng if rng is not None else make_rng(0)
    root = sigma.apply(np.sqrt)
    z = rng.standard_normal((int(n), sigma.dim)) @ root
    if distribution == "cauchy":
        z /= np.abs(rng.standard_normal(int(n)))[:, None]
    elif distribution == "tdist":
        if nu is None or not nu > 0:
            raise InputError("tdist sampling needs nu > 0")
        z /= np.sqrt(rng.chisquare(nu, int(n)) / nu)[:, None]
    return z


def spiked_scatter(q, leading=(10.0, 5.0, 3.0, 2.0)):
    """``diag(leading, 1, ..., 1)^2`` as a q x q matrix."""
    d = np.ones(q)
    k = min(len(leading), q)
    d[:k] = leading[:k]
    return np.diag(d**2)
