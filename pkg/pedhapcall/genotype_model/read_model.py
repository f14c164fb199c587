# read_model.py — MIT License
# See LICENSE.txt for full terms.

"""
Binomial read-count model: the probability of y variant reads among n reads
given the genotype g and the per-locus read error rate alpha. Everything is
evaluated in log space.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from .common import MAX_ERROR_RATE, PedCallValidationError

logger = logging.getLogger(__name__)

_LOG_HALF = math.log(0.5)
_LOG_FACTORIAL_CACHE_MAX = 1024
_LOG_FACTORIALS = gammaln(np.arange(_LOG_FACTORIAL_CACHE_MAX + 1) + 1.0)
_LOG_FACTORIALS.flags.writeable = False


@dataclass(frozen=True)
class ReadObservation:
    depth: int
    variants: int

    def __post_init__(self):
        for name in ("depth", "variants"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 0:
                raise PedCallValidationError(f"Read {name} must be a non-negative integer, got {value!r}.")
        if self.variants > self.depth:
            raise PedCallValidationError(f"Variant count {self.variants} exceeds read depth {self.depth}.")


@dataclass(frozen=True)
class ErrorRates:
    """Per-locus read error rates alpha_m in [0, 0.5)."""
    values: tuple

    def __post_init__(self):
        values = tuple(float(a) for a in np.atleast_1d(np.asarray(self.values, dtype=float)))
        if not values:
            raise PedCallValidationError("ErrorRates needs at least one locus.")
        for a in values:
            if not (0.0 <= a < MAX_ERROR_RATE):
                raise PedCallValidationError(f"Read error rate {a} outside [0, {MAX_ERROR_RATE}).")
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, alpha, num_loci):
        return cls((alpha,) * num_loci)

    @property
    def array(self):
        return np.asarray(self.values, dtype=float)

    def __len__(self):
        return len(self.values)


def log_binomial_coefficient(n, y):
    """log C(n, y), vectorized; log factorials are tabulated for n <= 1024."""
    n = np.asarray(n, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if n.size == 0 or n.max() <= _LOG_FACTORIAL_CACHE_MAX:
        return _LOG_FACTORIALS[n] - (_LOG_FACTORIALS[y] + _LOG_FACTORIALS[n - y])
    return gammaln(n + 1.0) - (gammaln(y + 1.0) + gammaln(n - y + 1.0))


def genotype_log_likelihoods(depths, variants, alpha):
    """
    Log Pr(y | n, g; alpha) for g = 0, 1, 2.

    depths and variants have shape (..., M) and alpha shape (M,); the result
    has shape (..., M, 3). A locus with n = 0 contributes 0 for every genotype.
    """
    n = np.asarray(depths, dtype=np.int64)
    y = np.asarray(variants, dtype=np.int64)
    a = np.asarray(alpha, dtype=float)
    log_coef = log_binomial_coefficient(n, y)
    miss = n - y
    out = np.empty(n.shape + (3,), dtype=float)
    # The g=0 and g=2 terms add the same two summands in the same order, so
    # Pr(y | g=0) and Pr(n-y | g=2) agree bit for bit.
    out[..., 0] = log_coef + (xlogy(y, a) + xlogy(miss, 1.0 - a))
    out[..., 1] = log_coef + n * _LOG_HALF
    out[..., 2] = log_coef + (xlogy(miss, a) + xlogy(y, 1.0 - a))
    return out


def read_log_likelihood(obs, g, alpha):
    """Log Pr(y | n, g; alpha) for a single locus."""
    if not isinstance(obs, ReadObservation):
        obs = ReadObservation(*obs)
    if g not in (0, 1, 2):
        raise PedCallValidationError(f"Genotype code must be 0, 1 or 2, got {g!r}.")
    if not (0.0 <= alpha < MAX_ERROR_RATE):
        raise PedCallValidationError(f"Read error rate {alpha} outside [0, {MAX_ERROR_RATE}).")
    if obs.depth == 0:
        return 0.0
    table = genotype_log_likelihoods([obs.depth], [obs.variants], [alpha])
    return float(table[0, g])


def individual_multilocus_log_likelihood(observations, genotypes, alpha):
    """Sum over loci of read_log_likelihood; errors are independent across SNPs."""
    if not isinstance(alpha, ErrorRates):
        alpha = ErrorRates(alpha)
    genotypes = list(genotypes)
    if not (len(observations) == len(genotypes) == len(alpha)):
        raise PedCallValidationError(
            f"Length mismatch: {len(observations)} observations, {len(genotypes)} genotypes, "
            f"{len(alpha)} error rates.")
    return math.fsum(read_log_likelihood(obs, int(g), a) for obs, g, a in zip(observations, genotypes, alpha.values))
