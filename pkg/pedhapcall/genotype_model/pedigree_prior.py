# pedigree_prior.py — MIT License
# See LICENSE.txt for full terms.

"""
Joint prior probabilities of genotypes and diploid haplotypes for sets of
relatives, computed through IBD configuration classes (ICCs).

Allele slots are numbered member by member: member s owns slots 2s and 2s+1.
An ICC partitions the slots into classes of IBD alleles; every class carries
one founder haplotype drawn independently from the founder frequencies.

A haplotype over M loci is an integer h in [0, 2^M); the minor-allele
indicator of locus m is bit (M-1-m) of h, so the pattern string "10" (minor
allele at the first SNP only) is haplotype 2.
"""
import enum
import functools
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .common import (
    DEFAULT_CONFIGURATION_CAP,
    SIMPLEX_TOLERANCE,
    PedCallCapacityError,
    PedCallValidationError,
)

logger = logging.getLogger(__name__)

_LOG_HALF = math.log(0.5)


# --- Haplotype helpers ---
def num_haplotypes(num_loci):
    return 1 << num_loci

def haplotype_allele(h, m, num_loci):
    """Minor-allele indicator (0/1) of haplotype h at locus m."""
    return (h >> (num_loci - 1 - m)) & 1

def haplotype_pattern(h, num_loci):
    return format(h, f"0{num_loci}b")

def parse_haplotype_pattern(pattern):
    if not pattern or any(c not in "01" for c in pattern):
        raise PedCallValidationError(f"Haplotype pattern '{pattern}' must be a non-empty 0/1 string.")
    return int(pattern, 2)

@functools.lru_cache(maxsize=None)
def haplotype_alleles(num_loci):
    """(H, M) read-only array of minor-allele indicators for every haplotype."""
    h = np.arange(num_haplotypes(num_loci))[:, None]
    shifts = np.arange(num_loci - 1, -1, -1)[None, :]
    alleles = ((h >> shifts) & 1).astype(np.int8)
    alleles.flags.writeable = False
    return alleles

def diplotype_genotypes(diplotype, num_loci):
    """Genotype vector (minor-allele counts per locus) of an unordered haplotype pair."""
    alleles = haplotype_alleles(num_loci)
    h1, h2 = diplotype
    return alleles[h1] + alleles[h2]

def unordered_diplotype(h1, h2):
    return (h1, h2) if h1 <= h2 else (h2, h1)


# --- Domain Types ---
class RelationshipKind(str, enum.Enum):
    UNRELATED_SINGLETON = "singleton"
    PARENT_OFFSPRING_TRIO = "trio"
    SIB_PAIR = "sib_pair"
    FIRST_COUSIN_PAIR = "first_cousin_pair"
    RELATIVE_PAIR = "relative_pair"
    CUSTOM_ICC = "custom"


@dataclass(frozen=True)
class IccConfiguration:
    """
    One IBD configuration class: a partition of the 2S allele slots.

    founder_pairs lists pairs of class indices that together form one
    founder's diplotype; it is only known for pedigrees whose sequenced
    members include all founders (singleton, trio, nuclear family).
    """
    classes: tuple
    founder_pairs: tuple = ()

    def __post_init__(self):
        classes = tuple(tuple(int(s) for s in c) for c in self.classes)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "founder_pairs", tuple(tuple(p) for p in self.founder_pairs))
        slots = [s for c in classes for s in c]
        if not classes or any(len(c) == 0 for c in classes):
            raise PedCallValidationError("ICC classes must be non-empty.")
        if sorted(slots) != list(range(len(slots))) or len(slots) % 2 != 0:
            raise PedCallValidationError(
                f"ICC classes {classes} do not partition an even number of allele slots 0..2S-1.")
        for pair in self.founder_pairs:
            if len(pair) != 2 or not all(0 <= c < len(classes) for c in pair):
                raise PedCallValidationError(f"Invalid founder pair {pair} for {len(classes)} classes.")
        paired = sorted(c for pair in self.founder_pairs for c in pair)
        if self.founder_pairs and paired != list(range(len(classes))):
            raise PedCallValidationError("Founder pairs must cover every IBD class exactly once.")

    @property
    def num_slots(self):
        return sum(len(c) for c in self.classes)

    @property
    def num_members(self):
        return self.num_slots // 2

    @property
    def num_distinct(self):
        return len(self.classes)

    def slot_classes(self):
        """Class index of every allele slot."""
        owner = [0] * self.num_slots
        for index, members in enumerate(self.classes):
            for slot in members:
                owner[slot] = index
        return tuple(owner)


@dataclass(frozen=True)
class IccDistribution:
    entries: tuple  # ((IccConfiguration, probability), ...)

    def __post_init__(self):
        entries = tuple((config, float(prob)) for config, prob in self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise PedCallValidationError("ICC distribution has no entries.")
        if len({config.num_slots for config, _ in entries}) != 1:
            raise PedCallValidationError("All ICCs of a distribution must cover the same allele slots.")
        for _, prob in entries:
            if not (0.0 <= prob <= 1.0):
                raise PedCallValidationError(f"ICC probability {prob} outside [0, 1].")
        total = math.fsum(prob for _, prob in entries)
        if abs(total - 1.0) > SIMPLEX_TOLERANCE:
            raise PedCallValidationError(f"ICC probabilities sum to {total!r}, not 1.")

    @property
    def num_members(self):
        return self.entries[0][0].num_members

    @property
    def has_founder_pairs(self):
        return all(config.founder_pairs for config, _ in self.entries)


_MEMBER_ROLES = {
    RelationshipKind.UNRELATED_SINGLETON: ("individual",),
    RelationshipKind.PARENT_OFFSPRING_TRIO: ("father", "mother", "child"),
    RelationshipKind.SIB_PAIR: ("sib1", "sib2"),
    RelationshipKind.FIRST_COUSIN_PAIR: ("cousin1", "cousin2"),
    RelationshipKind.RELATIVE_PAIR: ("relative1", "relative2"),
}

SIB_PAIR_IBD = (0.25, 0.5, 0.25)
FIRST_COUSIN_IBD = (0.75, 0.25, 0.0)


@dataclass(frozen=True)
class Relationship:
    kind: RelationshipKind
    k: tuple = None
    icc: IccDistribution = None
    name: str = None
    roles: tuple = None

    def __post_init__(self):
        kind = RelationshipKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is RelationshipKind.RELATIVE_PAIR:
            if self.k is None or len(self.k) != 3:
                raise PedCallValidationError("RelativePair needs (k0, k1, k2).")
            k = tuple(float(v) for v in self.k)
            if any(not (0.0 <= v <= 1.0) for v in k) or abs(math.fsum(k) - 1.0) > SIMPLEX_TOLERANCE:
                raise PedCallValidationError(f"IBD sharing probabilities {k} are not a distribution.")
            object.__setattr__(self, "k", k)
        elif self.k is not None:
            raise PedCallValidationError(f"IBD sharing probabilities only apply to relative pairs, not {kind.value}.")
        if kind is RelationshipKind.CUSTOM_ICC:
            if not isinstance(self.icc, IccDistribution):
                raise PedCallValidationError("CustomIcc needs an IccDistribution.")
        elif self.icc is not None:
            raise PedCallValidationError("An explicit ICC distribution only applies to custom relationships.")
        roles = self.roles
        if roles is None:
            roles = _MEMBER_ROLES.get(kind) or tuple(f"member{s + 1}" for s in range(self.icc.num_members))
        if len(roles) != self.num_members:
            raise PedCallValidationError(f"{len(roles)} role labels for {self.num_members} members.")
        object.__setattr__(self, "roles", tuple(roles))

    # --- constructors ---
    @classmethod
    def singleton(cls):
        return cls(RelationshipKind.UNRELATED_SINGLETON)

    @classmethod
    def trio(cls):
        return cls(RelationshipKind.PARENT_OFFSPRING_TRIO)

    @classmethod
    def sib_pair(cls):
        return cls(RelationshipKind.SIB_PAIR)

    @classmethod
    def first_cousin_pair(cls):
        return cls(RelationshipKind.FIRST_COUSIN_PAIR)

    @classmethod
    def relative_pair(cls, k0, k1, k2):
        return cls(RelationshipKind.RELATIVE_PAIR, k=(k0, k1, k2))

    @classmethod
    def custom(cls, icc, name=None, roles=None):
        return cls(RelationshipKind.CUSTOM_ICC, icc=icc, name=name, roles=roles)

    @property
    def num_members(self):
        if self.kind is RelationshipKind.CUSTOM_ICC:
            return self.icc.num_members
        return {RelationshipKind.UNRELATED_SINGLETON: 1, RelationshipKind.PARENT_OFFSPRING_TRIO: 3}.get(self.kind, 2)

    @property
    def tag(self):
        """Name used in pedigree files and logs."""
        if self.kind is RelationshipKind.CUSTOM_ICC:
            return self.name or "custom"
        return self.kind.value

    def __str__(self):
        if self.kind is RelationshipKind.RELATIVE_PAIR:
            return f"relative_pair{self.k}"
        return self.tag


@dataclass(frozen=True)
class FounderFrequencies:
    """
    Founder haplotype frequencies over M loci (length 2^M, on the simplex).

    genotype_freqs optionally replaces Hardy-Weinberg founder genotypes by
    free frequencies (pi0, pi1, pi2) at a single locus; freqs then holds the
    implied allele frequencies.
    """
    num_loci: int
    freqs: tuple
    genotype_freqs: tuple = None

    def __post_init__(self):
        if not isinstance(self.num_loci, (int, np.integer)) or self.num_loci < 1:
            raise PedCallValidationError(f"num_loci must be an integer >= 1, got {self.num_loci!r}.")
        object.__setattr__(self, "num_loci", int(self.num_loci))
        freqs = _simplex_tuple(self.freqs, "haplotype frequencies")
        if len(freqs) != num_haplotypes(self.num_loci):
            raise PedCallValidationError(
                f"Expected {num_haplotypes(self.num_loci)} haplotype frequencies for M={self.num_loci}, got {len(freqs)}.")
        object.__setattr__(self, "freqs", freqs)
        if self.genotype_freqs is not None:
            if self.num_loci != 1:
                raise PedCallValidationError("Free founder genotype frequencies are only defined for M=1.")
            object.__setattr__(self, "genotype_freqs", _simplex_tuple(self.genotype_freqs, "genotype frequencies", 3))

    @classmethod
    def from_maf(cls, p):
        return cls(1, (1.0 - p, p))

    @classmethod
    def independent(cls, mafs):
        """Haplotype frequencies under linkage equilibrium (product of per-locus allele frequencies)."""
        mafs = [float(p) for p in mafs]
        alleles = haplotype_alleles(len(mafs))
        p = np.asarray(mafs)
        freqs = np.prod(np.where(alleles == 1, p, 1.0 - p), axis=1)
        return cls(len(mafs), tuple(freqs / freqs.sum()))

    @classmethod
    def from_genotype_freqs(cls, genotype_freqs):
        g0, g1, g2 = genotype_freqs
        p = g2 + g1 / 2.0
        return cls(1, (1.0 - p, p), genotype_freqs=(g0, g1, g2))

    @property
    def array(self):
        return np.asarray(self.freqs, dtype=float)

    def mafs(self):
        """Per-locus minor (coded) allele frequencies."""
        return tuple(float(v) for v in self.array @ haplotype_alleles(self.num_loci))

    def marginal(self, loci):
        """Frequencies of the sub-haplotypes over the given loci."""
        loci = list(loci)
        alleles = haplotype_alleles(self.num_loci)[:, loci]
        weights = 1 << np.arange(len(loci) - 1, -1, -1)
        sub = alleles @ weights
        out = np.bincount(sub, weights=self.array, minlength=num_haplotypes(len(loci)))
        genotype_freqs = self.genotype_freqs if len(loci) == 1 and self.genotype_freqs is not None else None
        return FounderFrequencies(len(loci), tuple(out), genotype_freqs=genotype_freqs)

    def hw_genotype_freqs(self):
        """Founder genotype distribution at a single locus."""
        if self.num_loci != 1:
            raise PedCallValidationError("Genotype frequencies are only defined for M=1.")
        if self.genotype_freqs is not None:
            return self.genotype_freqs
        q, p = self.freqs
        return (q * q, 2.0 * p * q, p * p)


def _simplex_tuple(values, what, length=None):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or (length is not None and arr.size != length):
        raise PedCallValidationError(f"{what} must be a vector{'' if length is None else f' of length {length}'}.")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise PedCallValidationError(f"{what} must lie in [0, 1]: {arr.tolist()}")
    if abs(math.fsum(arr) - 1.0) > SIMPLEX_TOLERANCE:
        raise PedCallValidationError(f"{what} sum to {math.fsum(arr)!r}, not 1.")
    return tuple(float(v) for v in arr)


# --- Operations ---
_SINGLETON_ICC = IccConfiguration(classes=((0,), (1,)), founder_pairs=((0, 1),))
# Father owns slots 0,1; mother 2,3; child 4,5. With the parents' alleles
# assigned independently, fixing the child's alleles to the parents' first
# slots covers all four transmission outcomes with their 1/4 weights.
_TRIO_ICC = IccConfiguration(classes=((0, 4), (1,), (2, 5), (3,)), founder_pairs=((0, 1), (2, 3)))
_PAIR_ICCS = (
    IccConfiguration(classes=((0,), (1,), (2,), (3,))),
    IccConfiguration(classes=((0, 2), (1,), (3,))),
    IccConfiguration(classes=((0, 2), (1, 3))),
)


def icc_distribution(rel):
    """ICC distribution of the sequenced members of a relationship."""
    kind = rel.kind
    if kind is RelationshipKind.UNRELATED_SINGLETON:
        return IccDistribution(((_SINGLETON_ICC, 1.0),))
    if kind is RelationshipKind.PARENT_OFFSPRING_TRIO:
        return IccDistribution(((_TRIO_ICC, 1.0),))
    if kind is RelationshipKind.SIB_PAIR:
        k = SIB_PAIR_IBD
    elif kind is RelationshipKind.FIRST_COUSIN_PAIR:
        k = FIRST_COUSIN_IBD
    elif kind is RelationshipKind.RELATIVE_PAIR:
        k = rel.k
    elif kind is RelationshipKind.CUSTOM_ICC:
        return rel.icc
    else:
        raise PedCallValidationError(f"Unsupported relationship: {rel}")
    return IccDistribution(tuple(zip(_PAIR_ICCS, k)))


def nuclear_family_icc():
    """
    Two parents and two offspring, members ordered (father, mother, offspring1, offspring2).
    Offspring1 carries the parents' first alleles; offspring2 receives either
    parental allele independently, giving four ICCs of weight 1/4.
    """
    entries = []
    for from_father, from_mother in itertools.product((0, 1), (2, 3)):
        groups = {0: [0, 4], 1: [1], 2: [2, 5], 3: [3]}
        groups[from_father].append(6)
        groups[from_mother].append(7)
        entries.append((IccConfiguration(classes=tuple(tuple(groups[c]) for c in range(4)),
                                         founder_pairs=((0, 1), (2, 3))), 0.25))
    return IccDistribution(tuple(entries))


def nuclear_family():
    return Relationship.custom(nuclear_family_icc(), name="nuclear_family",
                               roles=("father", "mother", "offspring1", "offspring2"))


def pair_genotype_prior(g1, g2, phi, p, unordered=False):
    """
    Pr(g1, g2 | phi IBD alleles shared) for two relatives at a SNP with MAF p.

    Returns the probability of the ordered pair; unordered=True returns the
    tabulated value for the pair irrespective of order ((0,1) or (1,0)).
    """
    if not (0.0 < p < 1.0):
        raise PedCallValidationError(f"MAF must lie in (0, 1), got {p}.")
    if phi not in (0, 1, 2) or g1 not in (0, 1, 2) or g2 not in (0, 1, 2):
        raise PedCallValidationError(f"Invalid genotypes ({g1}, {g2}) or IBD count {phi}.")
    q = 1.0 - p
    lo, hi = min(g1, g2), max(g1, g2)
    table = {
        (0, 0): (q**4, q**3, q**2),
        (0, 1): (4 * p * q**3, 2 * p * q**2, 0.0),
        (0, 2): (2 * p**2 * q**2, 0.0, 0.0),
        (1, 1): (4 * p**2 * q**2, p**2 * q + p * q**2, 2 * p * q),
        (1, 2): (4 * p**3 * q, 2 * p**2 * q, 0.0),
        (2, 2): (p**4, p**3, p**2),
    }
    value = table[(lo, hi)][phi]
    if lo != hi and not unordered:
        value /= 2.0
    return value


@dataclass(frozen=True, eq=False)
class ConfigurationTable:
    """
    Every (ICC, haplotype assignment) configuration of a relationship at M loci,
    stored as parallel arrays over C configurations.
    """
    relationship: Relationship
    num_loci: int
    log_icc_weight: np.ndarray          # (C,)
    diplotypes: np.ndarray              # (C, S, 2), h <= h' per member
    genotypes: np.ndarray               # (C, S, M)
    genotype_onehot: np.ndarray         # (C, S, M, 3)
    haplotype_counts: np.ndarray        # (C, H) haplotypes on IBD-distinct alleles
    founder_genotype_counts: np.ndarray = None  # (C, 3), M=1 with founder pairs
    log_arrangement: np.ndarray = None          # (C,)

    @property
    def size(self):
        return self.log_icc_weight.shape[0]

    def log_prior(self, founders):
        """Log prior weight of every configuration under the founder frequencies."""
        if founders.num_loci != self.num_loci:
            raise PedCallValidationError(f"Founder frequencies cover {founders.num_loci} loci, table {self.num_loci}.")
        if founders.genotype_freqs is not None:
            if self.founder_genotype_counts is None:
                raise PedCallValidationError(
                    f"Free founder genotype frequencies need a pedigree of founders, not {self.relationship}.")
            g = np.asarray(founders.genotype_freqs)
            return self.log_icc_weight + xlogy(self.founder_genotype_counts, g).sum(axis=1) + self.log_arrangement
        return self.log_icc_weight + xlogy(self.haplotype_counts, founders.array).sum(axis=1)


def count_configurations(rel, num_loci):
    H = num_haplotypes(num_loci)
    return sum(H ** config.num_distinct for config, prob in icc_distribution(rel).entries if prob > 0.0)


@functools.lru_cache(maxsize=64)
def configuration_table(rel, num_loci, cap=DEFAULT_CONFIGURATION_CAP):
    total = count_configurations(rel, num_loci)
    if total > cap:
        raise PedCallCapacityError(
            f"{total} family configurations for relationship {rel} at M={num_loci} exceed the cap of {cap}.")
    H = num_haplotypes(num_loci)
    alleles = haplotype_alleles(num_loci)
    distribution = icc_distribution(rel)
    S = distribution.num_members
    with_founders = num_loci == 1 and distribution.has_founder_pairs
    parts = {key: [] for key in ("log_w", "dip", "counts", "fgc", "arr")}
    for config, prob in distribution.entries:
        if prob <= 0.0:
            continue
        d = config.num_distinct
        assign = np.stack(np.unravel_index(np.arange(H**d), (H,) * d), axis=1)  # (n, d)
        slot_haps = assign[:, list(config.slot_classes())].reshape(-1, S, 2)
        parts["dip"].append(np.sort(slot_haps, axis=2))
        parts["log_w"].append(np.full(assign.shape[0], math.log(prob)))
        parts["counts"].append((assign[:, :, None] == np.arange(H)[None, None, :]).sum(axis=1))
        if with_founders:
            first = assign[:, [a for a, _ in config.founder_pairs]]
            second = assign[:, [b for _, b in config.founder_pairs]]
            g = first + second
            parts["fgc"].append((g[:, :, None] == np.arange(3)[None, None, :]).sum(axis=1))
            parts["arr"].append(_LOG_HALF * (first != second).sum(axis=1))
    diplotypes = np.concatenate(parts["dip"])
    genotypes = (alleles[diplotypes[..., 0]] + alleles[diplotypes[..., 1]]).astype(np.int8)
    onehot = (genotypes[..., None] == np.arange(3)).astype(float)
    table = ConfigurationTable(
        relationship=rel,
        num_loci=num_loci,
        log_icc_weight=np.concatenate(parts["log_w"]),
        diplotypes=diplotypes,
        genotypes=genotypes,
        genotype_onehot=onehot,
        haplotype_counts=np.concatenate(parts["counts"]).astype(float),
        founder_genotype_counts=np.concatenate(parts["fgc"]).astype(float) if with_founders else None,
        log_arrangement=np.concatenate(parts["arr"]) if with_founders else None,
    )
    for name in ("log_icc_weight", "diplotypes", "genotypes", "genotype_onehot", "haplotype_counts"):
        getattr(table, name).flags.writeable = False
    logger.debug(f"Built {table.size} configurations for {rel} at M={num_loci}.")
    return table


def enumerate_family_configurations(rel, founders, cap=DEFAULT_CONFIGURATION_CAP):
    """
    Yields (member diplotypes, prior weight) with member diplotypes a tuple of
    unordered haplotype pairs; configurations inducing the same diplotypes are merged.
    """
    table = configuration_table(rel, founders.num_loci, cap)
    weights = np.exp(table.log_prior(founders))
    keys = table.diplotypes.reshape(table.size, -1)
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    merged = np.bincount(inverse.ravel(), weights=weights, minlength=unique.shape[0])
    for row, weight in zip(unique, merged):
        yield tuple(tuple(int(h) for h in pair) for pair in row.reshape(-1, 2)), float(weight)


def family_genotype_prior(genotypes, rel, founders, cap=DEFAULT_CONFIGURATION_CAP):
    """Pr(G | R; pi) for a genotype matrix indexed [locus, member]."""
    G = np.asarray(genotypes)
    if G.ndim != 2 or G.shape != (founders.num_loci, rel.num_members):
        raise PedCallValidationError(
            f"Genotype matrix must have shape (M={founders.num_loci}, S={rel.num_members}), got {G.shape}.")
    if not np.isin(G, (0, 1, 2)).all():
        raise PedCallValidationError("Genotype codes must be 0, 1 or 2.")
    table = configuration_table(rel, founders.num_loci, cap)
    match = np.all(table.genotypes == G.T[None, :, :], axis=(1, 2))
    if not match.any():
        return 0.0
    return float(np.exp(table.log_prior(founders)[match]).sum())
