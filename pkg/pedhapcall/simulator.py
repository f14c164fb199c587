# simulator.py — MIT License
# See LICENSE.txt for full terms.

"""
Synthetic family data: founder haplotypes, family diplotypes through IBD
configuration classes or explicit gene dropping, zero-truncated Poisson read
depths and binomial variant counts.

Replication k of a scenario draws from its own random stream derived from
(seed, k), so replications can run in any order or in parallel.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .genotype_model import (
    Dataset,
    ErrorRates,
    Family,
    FounderFrequencies,
    ModelParams,
    PedCallValidationError,
    RelationshipKind,
    haplotype_alleles,
    icc_distribution,
    num_haplotypes,
)

logger = logging.getLogger(__name__)

# Largest region over which haplotypes are tabulated by pattern index.
MAX_TABULATED_LOCI = 20

# --- Founder models ---
@dataclass(frozen=True)
class HaplotypeFounders:
    """Founders carry two independent draws from the haplotype frequencies (Hardy-Weinberg)."""
    founders: FounderFrequencies

    @property
    def num_loci(self):
        return self.founders.num_loci

    def true_frequencies(self):
        return self.founders

    def allele_table(self):
        return haplotype_alleles(self.num_loci)


@dataclass(frozen=True, eq=False)
class ReferencePanel:
    """Phased haplotypes over a region, one row per haplotype, 1 = minor allele."""
    haplotypes: np.ndarray

    def __post_init__(self):
        haps = np.array(self.haplotypes, dtype=np.int8, ndmin=2)
        if haps.shape[0] == 0 or haps.shape[1] == 0:
            raise PedCallValidationError("A reference panel needs at least one haplotype over at least one locus.")
        if not np.isin(haps, (0, 1)).all():
            raise PedCallValidationError("Panel haplotypes must be 0/1 vectors.")
        haps.flags.writeable = False
        object.__setattr__(self, "haplotypes", haps)

    @property
    def num_loci(self):
        return self.haplotypes.shape[1]

    def __len__(self):
        return self.haplotypes.shape[0]

    def mafs(self):
        return self.haplotypes.mean(axis=0)

    def restrict(self, loci):
        return ReferencePanel(self.haplotypes[:, list(loci)])

    def haplotype_indices(self):
        """Haplotype index h of every panel row."""
        if self.num_loci > 62:
            raise PedCallValidationError(f"Haplotype indices over {self.num_loci} loci overflow.")
        weights = 1 << np.arange(self.num_loci - 1, -1, -1)
        return self.haplotypes.astype(np.int64) @ weights

    def haplotype_frequencies(self, loci=None):
        """Empirical pattern frequencies over the given loci, usable as pi."""
        panel = self if loci is None else self.restrict(loci)
        if panel.num_loci > MAX_TABULATED_LOCI:
            raise PedCallValidationError(f"Haplotype frequencies over {panel.num_loci} loci are not tabulated.")
        counts = np.bincount(panel.haplotype_indices(), minlength=num_haplotypes(panel.num_loci))
        return FounderFrequencies(panel.num_loci, tuple(counts / counts.sum()))


@dataclass(frozen=True)
class PanelFounders:
    """Founder haplotypes resampled uniformly with replacement from a panel."""
    panel: ReferencePanel

    @property
    def num_loci(self):
        return self.panel.num_loci

    def true_frequencies(self):
        return self.panel.haplotype_frequencies() if self.num_loci <= MAX_TABULATED_LOCI else None

    def allele_table(self):
        return self.panel.haplotypes


@dataclass(frozen=True)
class FixationFounders:
    """Single-locus founders departing from Hardy-Weinberg by the fixation index F."""
    maf: float
    F: float = 0.0

    def __post_init__(self):
        p = float(self.maf)
        if not (0.0 < p < 1.0):
            raise PedCallValidationError(f"MAF must lie in (0, 1), got {p}.")
        q = 1.0 - p
        lower = -min(p / q, q / p)
        if not (lower < self.F <= 1.0):
            raise PedCallValidationError(f"Fixation index {self.F} outside ({lower:.6g}, 1] for MAF {p}.")

    @property
    def num_loci(self):
        return 1

    def genotype_freqs(self):
        p = self.maf
        q = 1.0 - p
        return (q * q + self.F * p * q, 2.0 * p * q * (1.0 - self.F), p * p + self.F * p * q)

    def true_frequencies(self):
        return FounderFrequencies.from_genotype_freqs(self.genotype_freqs())

    def allele_table(self):
        return haplotype_alleles(1)


def two_snp_pi(p1, p2, r):
    """
    Two-SNP haplotype frequencies from the minor allele frequencies and their
    correlation r. The haplotype carrying both minor alleles has frequency
    p1 p2 + r sqrt(p1 q1 p2 q2).
    """
    q1, q2 = 1.0 - p1, 1.0 - p2
    both = p1 * p2 + r * math.sqrt(p1 * q1 * p2 * q2)
    first_only = p1 - both
    second_only = p2 - both
    neither = 1.0 - both - first_only - second_only
    values = {"minor at both SNPs": both, "minor at the first SNP only": first_only,
              "minor at the second SNP only": second_only, "minor at neither SNP": neither}
    for label, value in values.items():
        if not (-1e-12 <= value <= 1.0 + 1e-12):
            raise PedCallValidationError(
                f"Infeasible (p1={p1}, p2={p2}, r={r}): frequency of the haplotype with {label} is {value}.")
    # Haplotype index order: "00", "01", "10", "11".
    freqs = np.clip([neither, second_only, first_only, both], 0.0, 1.0)
    return FounderFrequencies(2, tuple(freqs / freqs.sum()))


def haplotype_correlation(founders):
    """r between the minor alleles of a two-SNP haplotype distribution. A monomorphic SNP gives 0."""
    if founders.num_loci != 2:
        raise PedCallValidationError("Haplotype correlation is defined for two loci.")
    p1, p2 = founders.mafs()
    variance = p1 * (1 - p1) * p2 * (1 - p2)
    if variance <= 0.0:
        return 0.0
    return (founders.freqs[3] - p1 * p2) / math.sqrt(variance)


def make_synthetic_panel(num_loci, num_haplotypes, rng, num_templates=8, switch_rate=0.05, mutation_rate=0.01):
    """
    A panel with block-like LD: every haplotype copies a few template
    haplotypes, switching template with probability switch_rate per locus and
    flipping alleles with probability mutation_rate. Coded alleles are the minor ones.
    """
    template_freqs = rng.beta(0.3, 0.3, size=num_loci)
    templates = (rng.random((num_templates, num_loci)) < template_freqs).astype(np.int8)
    current = rng.integers(num_templates, size=num_haplotypes)
    haps = np.empty((num_haplotypes, num_loci), dtype=np.int8)
    for m in range(num_loci):
        switch = rng.random(num_haplotypes) < switch_rate
        current = np.where(switch, rng.integers(num_templates, size=num_haplotypes), current)
        haps[:, m] = templates[current, m]
    haps ^= (rng.random(haps.shape) < mutation_rate).astype(np.int8)
    flip = haps.mean(axis=0) > 0.5
    haps[:, flip] ^= 1
    return ReferencePanel(haps)


# --- Founder draws ---
def draw_haplotypes(model, rng, size):
    """
    Independent founder haplotype ids: pattern indices for HaplotypeFounders,
    panel rows for PanelFounders. model.allele_table() maps ids to alleles.
    """
    if isinstance(model, HaplotypeFounders):
        return rng.choice(num_haplotypes(model.num_loci), size=size, p=model.founders.array)
    if isinstance(model, PanelFounders):
        return rng.integers(len(model.panel), size=size)
    raise PedCallValidationError(f"{type(model).__name__} founders are drawn as whole diplotypes.")


def draw_founder_diplotypes(model, rng, count):
    """(count, 2) founder haplotype ids."""
    if isinstance(model, FixationFounders):
        g = rng.choice(3, size=count, p=model.genotype_freqs())
        return np.stack([(g == 2).astype(np.int64), (g >= 1).astype(np.int64)], axis=1)
    return draw_haplotypes(model, rng, (count, 2))


def sample_founder_diplotype(model, rng):
    """One founder diplotype as an unordered (h, h') pair of haplotype indices."""
    h1, h2 = haplotype_indices(model, draw_founder_diplotypes(model, rng, 1))[0]
    return int(h1), int(h2)


def haplotype_indices(model, ids):
    """Pattern indices of haplotype ids, each pair sorted along the last axis."""
    ids = np.asarray(ids)
    if isinstance(model, PanelFounders):
        ids = model.panel.haplotype_indices()[ids]
    return np.sort(ids, axis=-1)


# --- Family simulation ---
_GENE_DROP_KINDS = {
    RelationshipKind.UNRELATED_SINGLETON, RelationshipKind.PARENT_OFFSPRING_TRIO,
    RelationshipKind.SIB_PAIR, RelationshipKind.FIRST_COUSIN_PAIR,
}


def _has_pedigree(rel):
    return rel.kind in _GENE_DROP_KINDS or rel.tag == "nuclear_family"


def _transmit(parent, rng):
    pick = rng.integers(2, size=parent.shape[0])
    return parent[np.arange(parent.shape[0]), pick]


def _child(father, mother, rng):
    return np.stack([_transmit(father, rng), _transmit(mother, rng)], axis=1)


def drop_founder_alleles(rel, model, rng, count):
    """
    Gene dropping through explicit meioses; returns (count, S, 2) member
    haplotype ids for relationships with a known pedigree. Loci are completely
    linked, so a transmitted haplotype is passed on whole.
    """
    def founders():
        return draw_founder_diplotypes(model, rng, count)

    kind = rel.kind
    if kind is RelationshipKind.UNRELATED_SINGLETON:
        members = [founders()]
    elif kind is RelationshipKind.PARENT_OFFSPRING_TRIO:
        father, mother = founders(), founders()
        members = [father, mother, _child(father, mother, rng)]
    elif kind is RelationshipKind.SIB_PAIR:
        father, mother = founders(), founders()
        members = [_child(father, mother, rng), _child(father, mother, rng)]
    elif kind is RelationshipKind.FIRST_COUSIN_PAIR:
        grandfather, grandmother = founders(), founders()
        parent1 = _child(grandfather, grandmother, rng)
        parent2 = _child(grandfather, grandmother, rng)
        members = [_child(parent1, founders(), rng), _child(parent2, founders(), rng)]
    elif rel.tag == "nuclear_family":
        father, mother = founders(), founders()
        members = [father, mother, _child(father, mother, rng), _child(father, mother, rng)]
    else:
        raise PedCallValidationError(f"No explicit pedigree for relationship {rel}.")
    return np.stack(members, axis=1)


def _icc_families(rel, model, rng, count):
    distribution = icc_distribution(rel)
    configs = [c for c, _ in distribution.entries]
    probs = np.array([p for _, p in distribution.entries])
    chosen = rng.choice(len(configs), size=count, p=probs / probs.sum())
    out = np.empty((count, distribution.num_members, 2), dtype=np.int64)
    for c, config in enumerate(configs):
        rows = np.flatnonzero(chosen == c)
        if rows.size == 0:
            continue
        assign = draw_haplotypes(model, rng, (rows.size, config.num_distinct))
        out[rows] = assign[:, list(config.slot_classes())].reshape(rows.size, -1, 2)
    return out


def simulate_families(rel, model, rng, count, method="auto"):
    """
    (count, S, 2) member haplotype ids. method "icc" draws an IBD configuration
    class and one haplotype per IBD-distinct allele; "gene_drop" follows the
    pedigree's meioses. "auto" gene-drops trios and fixation-index founders.
    """
    if method == "auto":
        gene_drop = isinstance(model, FixationFounders) or rel.kind is RelationshipKind.PARENT_OFFSPRING_TRIO
        method = "gene_drop" if gene_drop else "icc"
    if method == "gene_drop":
        return drop_founder_alleles(rel, model, rng, count)
    if method == "icc":
        if isinstance(model, FixationFounders):
            raise PedCallValidationError("Fixation-index founders need an explicit pedigree.")
        return _icc_families(rel, model, rng, count)
    raise PedCallValidationError(f"Unknown simulation method '{method}'.")


def simulate_family(rel, model, rng, method="auto"):
    return simulate_families(rel, model, rng, 1, method)[0]


def diplotypes_to_genotypes(diplotypes, alleles):
    """Minor-allele counts (..., M) of haplotype id pairs (..., 2) under an allele table."""
    d = np.asarray(diplotypes)
    return (alleles[d[..., 0]] + alleles[d[..., 1]]).astype(np.int8)


# --- Reads ---
@dataclass(frozen=True)
class DepthModel:
    model: str = "poisson"
    mean: float = 10.0
    depth: int = None

    def __post_init__(self):
        if self.model == "poisson":
            if not self.mean > 0:
                raise PedCallValidationError(f"Poisson depth mean must be positive, got {self.mean}.")
        elif self.model == "fixed":
            if self.depth is None or self.depth < 0:
                raise PedCallValidationError(f"Fixed depth must be a non-negative integer, got {self.depth}.")
        else:
            raise PedCallValidationError(f"Unknown depth model '{self.model}'.")

    def draw(self, rng, shape):
        if self.model == "fixed":
            return np.full(shape, self.depth, dtype=np.int64)
        depths = rng.poisson(self.mean, size=shape)
        # Zero-truncated: redraw zeros until none remain.
        zeros = depths == 0
        while zeros.any():
            depths[zeros] = rng.poisson(self.mean, size=int(zeros.sum()))
            zeros = depths == 0
        return depths.astype(np.int64)

    @property
    def expected_depth(self):
        if self.model == "fixed":
            return float(self.depth)
        return self.mean / -math.expm1(-self.mean)


@dataclass(frozen=True)
class ErrorModel:
    model: str = "fixed"
    alpha: tuple = (0.01,)
    low: float = 0.001
    high: float = 0.1

    def __post_init__(self):
        if self.model == "fixed":
            ErrorRates(self.alpha)
            object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        elif self.model == "uniform":
            if not (0.0 <= self.low <= self.high < 0.5):
                raise PedCallValidationError(f"Error rate range [{self.low}, {self.high}] must satisfy 0 <= lo <= hi < 0.5.")
        else:
            raise PedCallValidationError(f"Unknown error model '{self.model}'.")

    def rates(self, rng, num_loci):
        if self.model == "uniform":
            return ErrorRates(rng.uniform(self.low, self.high, size=num_loci))
        if len(self.alpha) == 1:
            return ErrorRates.uniform(self.alpha[0], num_loci)
        if len(self.alpha) != num_loci:
            raise PedCallValidationError(f"{len(self.alpha)} fixed error rates for {num_loci} loci.")
        return ErrorRates(self.alpha)


def simulate_reads(genotypes, depth_model, alpha, rng):
    """
    (depths, variants) for genotype arrays of shape (..., M): depths from the
    depth model and variant counts binomial with success probability alpha,
    1/2 or 1 - alpha for g = 0, 1, 2.
    """
    g = np.asarray(genotypes)
    a = alpha.array if isinstance(alpha, ErrorRates) else np.asarray(alpha, dtype=float)
    depths = depth_model.draw(rng, g.shape)
    p_variant = np.where(g == 0, a, np.where(g == 1, 0.5, 1.0 - a))
    return depths, rng.binomial(depths, p_variant).astype(np.int64)


# --- Scenarios ---
@dataclass(frozen=True)
class ScenarioConfig:
    relationship: object
    families: int
    founders: object
    depth: DepthModel = DepthModel()
    errors: ErrorModel = ErrorModel()
    replications: int = 200
    seed: int = 0
    score_members: tuple = None
    name: str = None

    def __post_init__(self):
        if self.families < 1:
            raise PedCallValidationError(f"A scenario needs at least one family, got {self.families}.")
        if self.replications < 1:
            raise PedCallValidationError(f"A scenario needs at least one replication, got {self.replications}.")
        if isinstance(self.founders, FixationFounders) and not _has_pedigree(self.relationship):
            raise PedCallValidationError(f"Fixation-index founders need an explicit pedigree, not {self.relationship}.")
        if self.score_members is not None:
            members = tuple(int(s) for s in self.score_members)
            if not members or any(not (0 <= s < self.relationship.num_members) for s in members):
                raise PedCallValidationError(f"score_members {members} out of range for {self.relationship}.")
            object.__setattr__(self, "score_members", members)

    @property
    def num_loci(self):
        return self.founders.num_loci

    @property
    def label(self):
        return self.name or f"{self.relationship}"

    def expected_reads_per_snp(self):
        return self.families * self.relationship.num_members * self.depth.expected_depth


@dataclass(frozen=True, eq=False)
class TruthSet:
    family_ids: tuple
    member_ids: tuple      # per family
    snp_ids: tuple
    genotypes: np.ndarray  # (I, S, M)
    diplotypes: np.ndarray  # (I, S, 2) haplotype indices; None over long regions
    alpha: ErrorRates
    theta: ModelParams = None

    def genotype_rows(self):
        for i, fid in enumerate(self.family_ids):
            for s, member in enumerate(self.member_ids[i]):
                for m, snp in enumerate(self.snp_ids):
                    yield fid, member, snp, int(self.genotypes[i, s, m])


def replication_rng(seed, replication):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication,)))


def simulate_dataset(config, rng):
    """One dataset and its truth from the given random stream."""
    rel = config.relationship
    M = config.num_loci
    alpha = config.errors.rates(rng, M)
    ids = simulate_families(rel, config.founders, rng, config.families)
    genotypes = diplotypes_to_genotypes(ids, config.founders.allele_table())
    depths, variants = simulate_reads(genotypes, config.depth, alpha, rng)
    snp_ids = tuple(f"snp{m + 1}" for m in range(M))
    family_ids = tuple(f"F{i + 1:04d}" for i in range(config.families))
    member_ids = tuple(tuple(f"{fid}_{role}" for role in rel.roles) for fid in family_ids)
    families = tuple(Family(fid, rel, member_ids[i], depths[i], variants[i]) for i, fid in enumerate(family_ids))
    true_freqs = config.founders.true_frequencies()
    theta = ModelParams(true_freqs, alpha) if true_freqs is not None else None
    diplotypes = haplotype_indices(config.founders, ids) if M <= MAX_TABULATED_LOCI else None
    truth = TruthSet(family_ids, member_ids, snp_ids, genotypes, diplotypes, alpha, theta)
    return Dataset(families, M, snp_ids), truth


def simulate_replication(config, replication):
    return simulate_dataset(config, replication_rng(config.seed, replication))


def run_scenario(config):
    """Yields (Dataset, TruthSet) for every replication in order."""
    logger.info(f"Simulating {config.replications} replications of {config.families} {config.relationship} families.")
    for k in range(config.replications):
        yield simulate_replication(config, k)
