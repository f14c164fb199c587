# em_engine.py — MIT License
# See LICENSE.txt for full terms.

"""
Maximum-likelihood estimation of founder haplotype frequencies and per-locus
read error rates by EM, treating the family genotypes as missing data.

Families sharing a relationship are processed together as one batch: the
configuration table of the relationship is evaluated against the read
likelihoods of every family of the batch at once.
"""
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binom

from .common import DEFAULT_CONFIGURATION_CAP, MAX_ERROR_RATE, PedCallValidationError
from .pedigree_prior import (
    FounderFrequencies,
    Relationship,
    configuration_table,
)
from .read_model import ErrorRates, ReadObservation, genotype_log_likelihoods

logger = logging.getLogger(__name__)

MONOTONE_TOLERANCE = 1e-9
# Relative-change denominators are floored here so a zero parameter is allowed.
RELATIVE_CHANGE_FLOOR = 1e-12
# Expected homozygote reads below this leave a locus error rate unchanged.
MIN_HOMOZYGOTE_READS = 1e-8
# Parameters closer than this to the edge of their domain count as boundary estimates.
BOUNDARY_TOLERANCE = 1e-10
RESTART_ALPHA_RANGE = (0.001, 0.2)


# --- Domain Types ---
@dataclass(frozen=True)
class ModelParams:
    founders: FounderFrequencies
    errors: ErrorRates

    def __post_init__(self):
        if len(self.errors) != self.founders.num_loci:
            raise PedCallValidationError(
                f"{len(self.errors)} error rates for {self.founders.num_loci} loci.")

    @property
    def num_loci(self):
        return self.founders.num_loci

    def vector(self):
        founders = self.founders.genotype_freqs if self.founders.genotype_freqs is not None else self.founders.freqs
        return np.concatenate([np.asarray(founders, dtype=float), self.errors.array])

    def restrict(self, loci):
        loci = list(loci)
        return ModelParams(self.founders.marginal(loci), ErrorRates(self.errors.array[loci]))


@dataclass(frozen=True, eq=False)
class Family:
    """Read depths and variant counts of the sequenced members, indexed [member, locus]."""
    family_id: str
    relationship: Relationship
    member_ids: tuple
    depths: np.ndarray
    variants: np.ndarray

    def __post_init__(self):
        depths = np.array(self.depths, dtype=np.int64, ndmin=2)
        variants = np.array(self.variants, dtype=np.int64, ndmin=2)
        S = self.relationship.num_members
        if depths.shape != variants.shape or depths.ndim != 2 or depths.shape[0] != S:
            raise PedCallValidationError(
                f"Family '{self.family_id}': read arrays must have shape (S={S}, M), "
                f"got {depths.shape} and {variants.shape}.")
        if len(self.member_ids) != S:
            raise PedCallValidationError(
                f"Family '{self.family_id}': {len(self.member_ids)} member ids for relationship {self.relationship}.")
        if np.any(depths < 0) or np.any(variants < 0) or np.any(variants > depths):
            raise PedCallValidationError(f"Family '{self.family_id}': read counts violate 0 <= y <= n.")
        depths.flags.writeable = False
        variants.flags.writeable = False
        object.__setattr__(self, "depths", depths)
        object.__setattr__(self, "variants", variants)
        object.__setattr__(self, "member_ids", tuple(self.member_ids))

    @property
    def num_loci(self):
        return self.depths.shape[1]

    def observations(self, member):
        return [ReadObservation(int(n), int(y)) for n, y in zip(self.depths[member], self.variants[member])]

    def select_loci(self, loci):
        loci = list(loci)
        return Family(self.family_id, self.relationship, self.member_ids,
                      self.depths[:, loci], self.variants[:, loci])

    def as_singletons(self):
        singleton = Relationship.singleton()
        return [Family(self.family_id, singleton, (member,), self.depths[[s]], self.variants[[s]])
                for s, member in enumerate(self.member_ids)]


@dataclass(frozen=True, eq=False)
class Dataset:
    families: tuple
    num_loci: int
    snp_ids: tuple = None

    def __post_init__(self):
        families = tuple(self.families)
        object.__setattr__(self, "families", families)
        if self.num_loci < 1:
            raise PedCallValidationError("A dataset needs at least one locus.")
        for family in families:
            if family.num_loci != self.num_loci:
                raise PedCallValidationError(
                    f"Family '{family.family_id}' has {family.num_loci} loci; dataset has {self.num_loci}.")
        snp_ids = self.snp_ids if self.snp_ids is not None else tuple(f"snp{m + 1}" for m in range(self.num_loci))
        if len(snp_ids) != self.num_loci:
            raise PedCallValidationError(f"{len(snp_ids)} SNP ids for {self.num_loci} loci.")
        object.__setattr__(self, "snp_ids", tuple(snp_ids))

    def __len__(self):
        return len(self.families)

    def select_loci(self, loci):
        loci = list(loci)
        return Dataset(tuple(f.select_loci(loci) for f in self.families), len(loci),
                       tuple(self.snp_ids[m] for m in loci))

    def as_unrelated(self):
        """Every sequenced member becomes an unrelated singleton, in family then member order."""
        return Dataset(tuple(s for f in self.families for s in f.as_singletons()), self.num_loci, self.snp_ids)

    def batches(self):
        """Families grouped by relationship, groups in order of first appearance."""
        groups = {}
        for index, family in enumerate(self.families):
            groups.setdefault(family.relationship, []).append(index)
        return [FamilyBatch(rel, np.asarray(indices),
                            np.stack([self.families[i].depths for i in indices]),
                            np.stack([self.families[i].variants for i in indices]))
                for rel, indices in groups.items()]

    def digest(self):
        h = hashlib.sha256()
        for family in self.families:
            h.update(f"{family.family_id}|{family.relationship}|{','.join(family.member_ids)}".encode("utf-8"))
            h.update(family.depths.tobytes())
            h.update(family.variants.tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class FamilyBatch:
    relationship: Relationship
    indices: np.ndarray   # positions of the families in the dataset
    depths: np.ndarray    # (I, S, M)
    variants: np.ndarray  # (I, S, M)

    @property
    def num_loci(self):
        return self.depths.shape[2]


@dataclass(frozen=True)
class SufficientStats:
    """Expected complete-data counts accumulated by the E step."""
    haplotype_counts: np.ndarray     # (H,) founder haplotypes on IBD-distinct alleles
    homozygote_reads: np.ndarray     # (M,) n+ : reads of members with g in {0, 2}
    miscalls: np.ndarray             # (M,) u : incorrect reads among those
    founder_genotype_counts: np.ndarray = None  # (3,) when founders are sequenced and M = 1
    log_likelihood: float = 0.0

    def merge(self, other):
        fgc = None
        if self.founder_genotype_counts is not None and other.founder_genotype_counts is not None:
            fgc = self.founder_genotype_counts + other.founder_genotype_counts
        return SufficientStats(self.haplotype_counts + other.haplotype_counts,
                               self.homozygote_reads + other.homozygote_reads,
                               self.miscalls + other.miscalls, fgc,
                               self.log_likelihood + other.log_likelihood)


@dataclass(frozen=True)
class EStepResult:
    stats: SufficientStats
    posteriors: tuple  # per family, normalized weights over its configuration table


@dataclass(frozen=True)
class FitReport:
    theta_hat: ModelParams
    log_likelihood_trace: tuple
    iterations: int
    restarts: int
    converged: bool
    degenerate_loci: tuple = ()
    run_log_likelihoods: tuple = ()

    @property
    def log_likelihood(self):
        return self.log_likelihood_trace[-1]


@dataclass(frozen=True)
class EmConfig:
    init: ModelParams = None
    tol: float = 1e-8
    max_iter: int = 5000
    max_restarts: int = 5
    rng_seed: int = 0
    pooled_alpha: bool = False
    genotype_frequencies: bool = False
    configuration_cap: int = DEFAULT_CONFIGURATION_CAP
    init_maf: float = 0.2
    init_alpha: float = 0.01


@dataclass
class _Run:
    theta: ModelParams
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    degenerate: tuple = ()

    @property
    def log_likelihood(self):
        return self.trace[-1]


# --- Likelihood evaluation ---
def batch_posteriors(batch, theta, cap=DEFAULT_CONFIGURATION_CAP):
    """
    Returns (table, log_likelihoods (I,), posteriors (I, C)) for a batch of
    families of one relationship.
    """
    table = configuration_table(batch.relationship, theta.num_loci, cap)
    log_prior = table.log_prior(theta.founders)
    read_ll = genotype_log_likelihoods(batch.depths, batch.variants, theta.errors.array)  # (I, S, M, 3)
    S, M = table.genotypes.shape[1:]
    members = np.arange(S)[:, None]
    loci = np.arange(M)[None, :]
    log_joint = read_ll[:, members, loci, table.genotypes].sum(axis=(2, 3)) + log_prior[None, :]
    log_lik = logsumexp(log_joint, axis=1)
    if not np.all(np.isfinite(log_lik)):
        raise PedCallValidationError(
            f"Reads of {int(np.sum(~np.isfinite(log_lik)))} {batch.relationship} families have zero probability "
            "under the current parameters.")
    posteriors = np.exp(log_joint - log_lik[:, None])
    return table, log_lik, posteriors


def _batch_stats(batch, theta, config):
    table, log_lik, post = batch_posteriors(batch, theta, config.configuration_cap)
    weights = post.sum(axis=0)
    marginals = np.einsum("ic,csmg->ismg", post, table.genotype_onehot)
    n = batch.depths
    y = batch.variants
    homozygote_reads = ((marginals[..., 0] + marginals[..., 2]) * n).sum(axis=(0, 1))
    miscalls = (marginals[..., 0] * y + marginals[..., 2] * (n - y)).sum(axis=(0, 1))
    fgc = None
    if table.founder_genotype_counts is not None:
        fgc = weights @ table.founder_genotype_counts
    stats = SufficientStats(weights @ table.haplotype_counts, homozygote_reads, miscalls, fgc,
                            float(log_lik.sum()))
    return stats, post


def _accumulate(batches, theta, config, keep_posteriors=False):
    total = None
    posteriors = []
    for batch in batches:
        stats, post = _batch_stats(batch, theta, config)
        if config.genotype_frequencies and stats.founder_genotype_counts is None:
            raise PedCallValidationError(
                f"Free founder genotype frequencies need sequenced founders; {batch.relationship} has none at M={theta.num_loci}.")
        total = stats if total is None else total.merge(stats)
        if keep_posteriors:
            posteriors.append((batch.indices, post))
    return total, posteriors


def family_log_likelihood(family, theta, cap=DEFAULT_CONFIGURATION_CAP):
    """log Pr(Y | N, R; theta) for one family."""
    if family.num_loci != theta.num_loci:
        raise PedCallValidationError(f"Family has {family.num_loci} loci; parameters cover {theta.num_loci}.")
    batch = FamilyBatch(family.relationship, np.array([0]), family.depths[None], family.variants[None])
    _, log_lik, _ = batch_posteriors(batch, theta, cap)
    return float(log_lik[0])


def e_step(data, theta, config=None):
    """Posterior configuration weights per family plus the expected sufficient statistics."""
    config = config or EmConfig()
    if data.num_loci != theta.num_loci:
        raise PedCallValidationError(f"Dataset has {data.num_loci} loci; parameters cover {theta.num_loci}.")
    stats, grouped = _accumulate(data.batches(), theta, config, keep_posteriors=True)
    posteriors = [None] * len(data)
    for indices, post in grouped:
        for row, index in enumerate(indices):
            posteriors[index] = post[row]
    return EStepResult(stats, tuple(posteriors))


def m_step(stats, previous, config=None):
    """
    Maximizes the expected complete-data likelihood. Returns (params, degenerate
    loci); a degenerate locus had too few expected homozygote reads and keeps
    its previous error rate.
    """
    config = config or EmConfig()
    M = previous.num_loci
    if config.genotype_frequencies:
        if stats.founder_genotype_counts is None:
            raise PedCallValidationError("Statistics carry no founder genotype counts.")
        founders = FounderFrequencies.from_genotype_freqs(
            stats.founder_genotype_counts / stats.founder_genotype_counts.sum())
    else:
        founders = FounderFrequencies(M, stats.haplotype_counts / stats.haplotype_counts.sum())

    previous_alpha = previous.errors.array
    hom = np.asarray(stats.homozygote_reads, dtype=float)
    mis = np.asarray(stats.miscalls, dtype=float)
    if config.pooled_alpha:
        hom = np.full(M, hom.sum())
        mis = np.full(M, mis.sum())
    enough = hom >= MIN_HOMOZYGOTE_READS
    alpha = np.where(enough, mis / np.where(enough, hom, 1.0), previous_alpha)
    degenerate = tuple(int(m) for m in np.flatnonzero(~enough))
    if degenerate:
        logger.debug(f"Error rate held at loci {degenerate}: expected homozygote reads below {MIN_HOMOZYGOTE_READS}.")
    ceiling = MAX_ERROR_RATE - BOUNDARY_TOLERANCE
    if np.any(alpha > ceiling):
        logger.warning(f"Error rate estimates {alpha[alpha > ceiling].tolist()} clipped below {MAX_ERROR_RATE}.")
        alpha = np.minimum(alpha, ceiling)
    return ModelParams(founders, ErrorRates(alpha)), degenerate


def relative_change(previous, current):
    a = previous.vector()
    b = current.vector()
    return float(np.max(np.abs(b - a) / np.maximum(np.abs(a), RELATIVE_CHANGE_FLOOR)))


# --- Fitting ---
def _initial_params(num_loci, config):
    if config.init is not None:
        if config.init.num_loci != num_loci:
            raise PedCallValidationError(f"Initial parameters cover {config.init.num_loci} loci, data {num_loci}.")
        return config.init
    if config.genotype_frequencies:
        founders = FounderFrequencies.from_genotype_freqs(
            FounderFrequencies.from_maf(config.init_maf).hw_genotype_freqs())
    else:
        founders = FounderFrequencies.independent([config.init_maf] * num_loci)
    return ModelParams(founders, ErrorRates.uniform(config.init_alpha, num_loci))


def _random_params(rng, num_loci, config):
    if config.genotype_frequencies:
        founders = FounderFrequencies.from_genotype_freqs(rng.dirichlet(np.ones(3)))
    else:
        founders = FounderFrequencies(num_loci, rng.dirichlet(np.ones(1 << num_loci)))
    low, high = RESTART_ALPHA_RANGE
    if config.pooled_alpha:
        alpha = np.full(num_loci, rng.uniform(low, high))
    else:
        alpha = rng.uniform(low, high, size=num_loci)
    return ModelParams(founders, ErrorRates(alpha))


def on_boundary(theta):
    founders = theta.founders.genotype_freqs if theta.founders.genotype_freqs is not None else theta.founders.freqs
    alpha = theta.errors.array
    return (min(founders) < BOUNDARY_TOLERANCE or alpha.min() < BOUNDARY_TOLERANCE
            or alpha.max() > MAX_ERROR_RATE - 2 * BOUNDARY_TOLERANCE)


def _record(trace, value):
    assert not trace or value >= trace[-1] - MONOTONE_TOLERANCE, (
        f"EM log-likelihood decreased from {trace[-1]!r} to {value!r}")
    trace.append(value)


def _run_em(batches, theta, config):
    run = _Run(theta)
    for iteration in range(1, config.max_iter + 1):
        stats, _ = _accumulate(batches, run.theta, config)
        _record(run.trace, stats.log_likelihood)
        logger.debug(f"EM iteration {iteration}: log-likelihood {stats.log_likelihood:.10f}")
        new_theta, run.degenerate = m_step(stats, run.theta, config)
        change = relative_change(run.theta, new_theta)
        run.theta = new_theta
        run.iterations = iteration
        if change <= config.tol:
            run.converged = True
            break
    final, _ = _accumulate(batches, run.theta, config)
    _record(run.trace, final.log_likelihood)
    return run


def fit(data, config=None):
    """
    Fits theta = (pi, alpha) by EM. A run that ends on the parameter boundary
    triggers random restarts; the highest-likelihood run is reported (ties go
    to the earliest run).
    """
    config = config or EmConfig()
    if len(data) == 0:
        raise PedCallValidationError("Cannot fit an empty dataset.")
    batches = data.batches()
    rng = np.random.default_rng(config.rng_seed)
    runs = [_run_em(batches, _initial_params(data.num_loci, config), config)]
    while len(runs) - 1 < config.max_restarts and on_boundary(runs[-1].theta):
        logger.warning(f"EM run {len(runs)} ended on the parameter boundary "
                    f"(log-likelihood {runs[-1].log_likelihood:.6f}); restarting from a random start.")
        runs.append(_run_em(batches, _random_params(rng, data.num_loci, config), config))
    best = max(range(len(runs)), key=lambda i: (runs[i].log_likelihood, -i))
    run = runs[best]
    if run.degenerate:
        logger.warning(f"Error rates at loci {run.degenerate} held at their previous values: "
                       f"fewer than {MIN_HOMOZYGOTE_READS} expected homozygote reads.")
    if not run.converged:
        logger.warning(f"EM did not converge within {config.max_iter} iterations (tol {config.tol}).")
    logger.info(f"EM fit on {len(data)} families, M={data.num_loci}: log-likelihood {run.log_likelihood:.6f} "
                f"after {run.iterations} iterations, {len(runs) - 1} restarts.")
    return FitReport(theta_hat=run.theta, log_likelihood_trace=tuple(run.trace), iterations=run.iterations,
                     restarts=len(runs) - 1, converged=run.converged, degenerate_loci=run.degenerate,
                     run_log_likelihoods=tuple(r.log_likelihood for r in runs))


@dataclass(frozen=True)
class SingleSnpFit:
    maf: float
    alpha: float
    log_likelihood_trace: tuple
    iterations: int
    converged: bool


def fit_single_snp_unrelated(depths, variants, tol=1e-8, max_iter=5000, init_maf=0.2, init_alpha=0.01):
    """
    Single-SNP EM for unrelated individuals with Hardy-Weinberg genotype
    frequencies, written directly on the three genotypes.
    """
    n = np.asarray(depths, dtype=np.int64).ravel()
    y = np.asarray(variants, dtype=np.int64).ravel()
    if n.size == 0:
        raise PedCallValidationError("Cannot fit an empty sample.")
    p, alpha = float(init_maf), float(init_alpha)
    trace = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        log_post, log_lik = _single_snp_posterior(n, y, p, alpha)
        _record(trace, log_lik)
        post = np.exp(log_post)
        new_p = float((post[:, 1] + 2.0 * post[:, 2]).sum() / (2.0 * n.size))
        hom_reads = float(((post[:, 0] + post[:, 2]) * n).sum())
        new_alpha = float((post[:, 0] * y + post[:, 2] * (n - y)).sum() / hom_reads) \
            if hom_reads >= MIN_HOMOZYGOTE_READS else alpha
        new_alpha = min(new_alpha, MAX_ERROR_RATE - BOUNDARY_TOLERANCE)
        old = np.array([1.0 - p, p, alpha])
        new = np.array([1.0 - new_p, new_p, new_alpha])
        p, alpha = new_p, new_alpha
        if np.max(np.abs(new - old) / np.maximum(np.abs(old), RELATIVE_CHANGE_FLOOR)) <= tol:
            converged = True
            break
    _record(trace, _single_snp_posterior(n, y, p, alpha)[1])
    return SingleSnpFit(p, alpha, tuple(trace), iterations, converged)


def _single_snp_posterior(n, y, p, alpha):
    with np.errstate(divide="ignore"):
        log_prior = np.log([(1.0 - p) ** 2, 2.0 * p * (1.0 - p), p * p])
    log_read = np.stack([binom.logpmf(y, n, alpha), binom.logpmf(y, n, 0.5), binom.logpmf(y, n, 1.0 - alpha)], axis=1)
    log_joint = log_read + log_prior[None, :]
    log_lik = logsumexp(log_joint, axis=1)
    return log_joint - log_lik[:, None], float(log_lik.sum())
