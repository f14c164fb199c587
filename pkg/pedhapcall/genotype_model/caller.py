# caller.py — MIT License
# See LICENSE.txt for full terms.

"""
Posterior-mode genotype and diploid haplotype calls given fitted parameters,
plus the three-step LD pipeline: single-SNP calls, genotype correlations
between SNPs, and re-calling each SNP jointly with a chosen partner SNP.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .common import (
    DEFAULT_CONFIGURATION_CAP,
    DEFAULT_MAX_HAPLOTYPE_LOCI,
    PedCallCapacityError,
    PedCallValidationError,
)
from .em_engine import Dataset, EmConfig, batch_posteriors, fit

logger = logging.getLogger(__name__)


# --- Domain Types ---
@dataclass(frozen=True)
class CallerConfig:
    configuration_cap: int = DEFAULT_CONFIGURATION_CAP
    max_haplotype_loci: int = DEFAULT_MAX_HAPLOTYPE_LOCI
    # Relative tolerance under which two posterior modes are treated as tied.
    tie_rtol: float = 1e-12


@dataclass(frozen=True, eq=False)
class CallResult:
    """
    The called genotypes of one family, indexed [member, locus], with the
    posterior probability of the called matrix and per-locus genotype marginals.
    diplotypes holds the called (h, h') pair per member for haplotype calls.
    """
    family_id: str
    member_ids: tuple
    snp_ids: tuple
    genotypes: np.ndarray       # (S, M) int8
    mode_posterior: float
    marginals: np.ndarray       # (S, M, 3)
    tie_flag: bool
    diplotypes: tuple = None

    @property
    def num_loci(self):
        return len(self.snp_ids)

    def rows(self):
        """(member_id, snp_id, call, marginal 3-vector) for every member and locus."""
        for s, member in enumerate(self.member_ids):
            for m, snp in enumerate(self.snp_ids):
                yield member, snp, int(self.genotypes[s, m]), self.marginals[s, m]


@dataclass(frozen=True)
class PairSelection:
    target: int
    partner: int
    r: float
    partner_alpha: float


@dataclass(frozen=True)
class PipelineConfig:
    min_r2: float = 0.5
    # Weight of the partner's estimated error rate in the partner score r^2 - penalty * alpha.
    penalty: float = 1.0
    em: EmConfig = field(default_factory=EmConfig)
    caller: CallerConfig = field(default_factory=CallerConfig)


@dataclass(frozen=True)
class PipelineResult:
    calls: tuple            # per SNP: tuple of single-locus CallResults in dataset order
    single_snp_calls: tuple  # step-1 calls, same layout
    partners: tuple         # per SNP: PairSelection or None
    correlations: np.ndarray
    single_snp_fits: tuple
    pair_fits: dict
    converged: bool


# --- Posterior mode ---
def _mode_calls(data, theta, config, loci, haplotypes):
    """Calls for every family of data, in dataset order."""
    results = [None] * len(data)
    snp_ids = tuple(data.snp_ids[m] for m in loci)
    for batch in data.batches():
        table, _, post = batch_posteriors(batch, theta, config.configuration_cap)
        if haplotypes:
            keys = table.diplotypes.reshape(table.size, -1)
        else:
            keys = table.genotypes[:, :, loci].reshape(table.size, -1)
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        merged = np.zeros((unique.shape[0], post.shape[0]))
        np.add.at(merged, inverse.ravel(), post.T)
        merged = merged.T  # (I, U)

        if haplotypes:
            minor = table.genotypes.sum(axis=(1, 2))
            key_minor = np.zeros(unique.shape[0], dtype=np.int64)
            key_minor[inverse.ravel()] = minor
        else:
            key_minor = unique.sum(axis=1)
        # np.unique sorts keys lexicographically, so the key index is the lexicographic rank.
        order = np.lexsort((np.arange(unique.shape[0]), key_minor))
        best = merged.max(axis=1, keepdims=True)
        candidates = merged >= best * (1.0 - config.tie_rtol)
        chosen = order[np.argmax(candidates[:, order], axis=1)]
        ties = candidates.sum(axis=1) > 1

        marginals = np.einsum("ic,csmg->ismg", post, table.genotype_onehot[:, :, loci, :])
        S = table.genotypes.shape[1]
        for row, index in enumerate(batch.indices):
            family = data.families[index]
            key = unique[chosen[row]]
            if haplotypes:
                diplotypes = tuple(tuple(int(h) for h in pair) for pair in key.reshape(S, 2))
                genotypes = table.genotypes[np.flatnonzero(inverse.ravel() == chosen[row])[0]][:, loci]
            else:
                diplotypes = None
                genotypes = key.reshape(S, len(loci))
            if ties[row]:
                logger.debug(f"Family '{family.family_id}': tied posterior modes, kept the fewest minor alleles.")
            results[index] = CallResult(
                family_id=family.family_id,
                member_ids=family.member_ids,
                snp_ids=snp_ids,
                genotypes=np.asarray(genotypes, dtype=np.int8),
                mode_posterior=float(merged[row, chosen[row]]),
                marginals=marginals[row],
                tie_flag=bool(ties[row]),
                diplotypes=diplotypes,
            )
    return results


def call_dataset(data, theta, config=None, loci=None):
    """
    Genotype calls for every family. With loci given, the mode is taken over
    the genotypes at those loci only, the remaining loci summed out.
    """
    config = config or CallerConfig()
    if data.num_loci != theta.num_loci:
        raise PedCallValidationError(f"Dataset has {data.num_loci} loci; parameters cover {theta.num_loci}.")
    loci = list(range(data.num_loci)) if loci is None else [int(m) for m in loci]
    if not loci or any(not (0 <= m < data.num_loci) for m in loci):
        raise PedCallValidationError(f"Loci {loci} out of range for M={data.num_loci}.")
    return _mode_calls(data, theta, config, loci, haplotypes=False)


def call_family(family, theta, config=None, snp_ids=None):
    data = Dataset((family,), family.num_loci, snp_ids)
    return call_dataset(data, theta, config)[0]


def call_dataset_haplotypes(data, theta, config=None):
    config = config or CallerConfig()
    M = data.num_loci
    if M < 2:
        raise PedCallValidationError("Diploid haplotype calls need at least two loci.")
    if M > config.max_haplotype_loci:
        raise PedCallCapacityError(
            f"Diploid haplotype calls over {M} loci exceed the limit of {config.max_haplotype_loci}.")
    if theta.num_loci != M:
        raise PedCallValidationError(f"Dataset has {M} loci; parameters cover {theta.num_loci}.")
    return _mode_calls(data, theta, config, list(range(M)), haplotypes=True)


def call_diploid_haplotypes(family, theta, config=None, snp_ids=None):
    """Mode over the members' unordered diploid haplotypes; genotype marginals by summation."""
    data = Dataset((family,), family.num_loci, snp_ids)
    return call_dataset_haplotypes(data, theta, config)[0]


# --- Linkage disequilibrium ---
def genotype_correlation(calls_a, calls_b):
    """
    Pearson correlation of called genotype codes. Returns (r, defined);
    r is 0.0 and defined False when either vector has no variance.
    """
    a = np.asarray(calls_a, dtype=float)
    b = np.asarray(calls_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise PedCallValidationError(f"Genotype vectors must be 1-D of equal length, got {a.shape} and {b.shape}.")
    if a.size < 2:
        raise PedCallValidationError("Correlation needs at least two individuals.")
    a = a - a.mean()
    b = b - b.mean()
    denominator = np.sqrt((a @ a) * (b @ b))
    if denominator == 0.0:
        return 0.0, False
    return float(np.clip((a @ b) / denominator, -1.0, 1.0)), True


def correlation_matrix(calls):
    """r matrix and defined-mask over the columns (SNPs) of an (individuals, M) call matrix."""
    x = np.asarray(calls, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise PedCallValidationError(f"Need an (individuals >= 2, M) call matrix, got shape {x.shape}.")
    centered = x - x.mean(axis=0)
    norms = np.sqrt((centered * centered).sum(axis=0))
    varying = norms > 0.0
    defined = varying[:, None] & varying[None, :]
    safe = np.where(varying, norms, 1.0)
    r = (centered.T @ centered) / np.outer(safe, safe)
    r = np.clip(np.where(defined, r, 0.0), -1.0, 1.0)
    np.fill_diagonal(r, np.where(varying, 1.0, 0.0))
    return r, defined


def select_partner(target, r, alpha_hat, min_r2=0.5, penalty=1.0, defined=None):
    """
    Picks the partner SNP maximizing r^2 - penalty * alpha among SNPs with
    r^2 >= min_r2; None when no SNP qualifies. Ties go to the lowest index.
    """
    r = np.asarray(r, dtype=float)
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1] or not np.allclose(r, r.T):
        raise PedCallValidationError("Correlation matrix must be square and symmetric.")
    if alpha_hat.shape != (r.shape[0],):
        raise PedCallValidationError(f"{alpha_hat.size} error rates for {r.shape[0]} SNPs.")
    r2 = r[target] ** 2
    eligible = r2 >= min_r2
    eligible[target] = False
    if defined is not None:
        eligible &= np.asarray(defined)[target]
    if not eligible.any():
        return None
    score = np.where(eligible, r2 - penalty * alpha_hat, -np.inf)
    partner = int(np.argmax(score))
    return PairSelection(target=int(target), partner=partner, r=float(r[target, partner]),
                         partner_alpha=float(alpha_hat[partner]))


def _stack_genotypes(results, snp):
    return np.concatenate([res.genotypes[:, snp] for res in results])


def ld_pipeline(data, config=None):
    """
    Calls every SNP of a region: single-SNP fits and calls, composite LD
    between the calls, then a two-locus refit and target-locus re-call for
    each SNP that has a partner. SNPs without a partner keep their single-SNP calls.
    """
    config = config or PipelineConfig()
    M = data.num_loci
    if M < 2:
        raise PedCallValidationError("The LD pipeline needs a region of at least two SNPs.")

    single_fits = []
    single_calls = []
    for m in range(M):
        sub = data.select_loci([m])
        report = fit(sub, config.em)
        single_fits.append(report)
        single_calls.append(tuple(call_dataset(sub, report.theta_hat, config.caller)))

    genotypes = np.stack([_stack_genotypes(calls, 0) for calls in single_calls], axis=1)
    r, defined = correlation_matrix(genotypes)
    alpha_hat = np.array([report.theta_hat.errors.values[0] for report in single_fits])

    calls = list(single_calls)
    partners = []
    pair_fits = {}
    for m in range(M):
        selection = select_partner(m, r, alpha_hat, config.min_r2, config.penalty, defined)
        partners.append(selection)
        if selection is None:
            continue
        sub = data.select_loci([m, selection.partner])
        report = fit(sub, config.em)
        pair_fits[m] = report
        calls[m] = tuple(call_dataset(sub, report.theta_hat, config.caller, loci=[0]))
        logger.debug(f"SNP {data.snp_ids[m]} re-called with partner {data.snp_ids[selection.partner]} "
                     f"(r={selection.r:.3f}).")

    converged = all(f.converged for f in single_fits) and all(f.converged for f in pair_fits.values())
    logger.info(f"LD pipeline over {M} SNPs: {len(pair_fits)} re-called with a partner.")
    return PipelineResult(calls=tuple(calls), single_snp_calls=tuple(single_calls), partners=tuple(partners),
                          correlations=r, single_snp_fits=tuple(single_fits), pair_fits=pair_fits,
                          converged=converged)
