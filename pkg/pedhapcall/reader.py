# reader.py — MIT License
# See LICENSE.txt for full terms.

"""
Parsers for the tab-separated input files (read counts, pedigrees, fitted
parameters), reference panels and JSON scenario documents.
"""
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .genotype_model import (
    Dataset,
    ErrorRates,
    Family,
    FounderFrequencies,
    ModelParams,
    PedCallFormatError,
    PedCallValidationError,
    Relationship,
    nuclear_family,
    parse_haplotype_pattern,
)
from .simulator import (
    DepthModel,
    ErrorModel,
    FixationFounders,
    HaplotypeFounders,
    PanelFounders,
    ReferencePanel,
    ScenarioConfig,
    two_snp_pi,
)

logger = logging.getLogger(__name__)

COUNTS_HEADER = ("family_id", "member_id", "snp_id", "depth", "variants")
PEDIGREE_HEADER = ("family_id", "relationship", "member_ids", "k0", "k1", "k2")
PARAMS_HEADER = ("snp_id", "maf_hat", "alpha_hat")
HAPLOTYPES_HEADER = ("pattern", "frequency")
RELATIONSHIP_TAGS = ("singleton", "trio", "sib_pair", "first_cousin_pair", "relative_pair", "nuclear_family")
# Rounded frequencies in a params file may miss 1 by this much before renormalizing.
PARAMS_SUM_TOLERANCE = 1e-8


# --- Domain Types ---
@dataclass(frozen=True)
class CountsRow:
    family_id: str
    member_id: str
    snp_id: str
    depth: int
    variants: int


@dataclass(frozen=True)
class CountsTable:
    rows: tuple

    def snp_ids(self):
        """SNP ids in order of first appearance."""
        return tuple(dict.fromkeys(row.snp_id for row in self.rows))

    def lookup(self):
        return {(r.family_id, r.member_id, r.snp_id): (r.depth, r.variants) for r in self.rows}


@dataclass(frozen=True)
class PedigreeRow:
    family_id: str
    relationship: Relationship
    member_ids: tuple


@dataclass(frozen=True)
class ParamsFile:
    snp_ids: tuple
    mafs: tuple
    alphas: tuple
    haplotypes: FounderFrequencies = None
    converged: bool = None

    def model_params(self, loci=None):
        """pi from the haplotype section when present, otherwise independent SNPs."""
        founders = self.haplotypes or FounderFrequencies.independent(self.mafs)
        theta = ModelParams(founders, ErrorRates(self.alphas))
        return theta if loci is None else theta.restrict(loci)


# --- Helpers ---
def _table_lines(path, header):
    """
    Yields (line number, fields) for the data rows of a tab-separated file
    after validating its header. Blank lines and '#' comments are skipped.
    """
    seen_header = False
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if not seen_header:
                if tuple(fields) != header:
                    raise PedCallFormatError(f"Expected header {'|'.join(header)}, got {'|'.join(fields)}.",
                                             path, line_no)
                seen_header = True
                continue
            if len(fields) != len(header):
                raise PedCallFormatError(f"Expected {len(header)} columns, got {len(fields)}.", path, line_no)
            yield line_no, fields
    if not seen_header:
        raise PedCallFormatError("Missing header row.", path)


def _parse_int(value, path, line_no, column):
    try:
        number = int(value)
    except ValueError:
        raise PedCallFormatError(f"'{value}' is not an integer.", path, line_no, column) from None
    if number < 0:
        raise PedCallFormatError(f"{number} is negative.", path, line_no, column)
    return number


def _parse_float(value, path, line_no, column):
    try:
        return float(value)
    except ValueError:
        raise PedCallFormatError(f"'{value}' is not a number.", path, line_no, column) from None


def parse_relationship(tag, k=None):
    """Relationship from its file tag; relative_pair takes (k0, k1, k2)."""
    if tag == "singleton":
        return Relationship.singleton()
    if tag == "trio":
        return Relationship.trio()
    if tag == "sib_pair":
        return Relationship.sib_pair()
    if tag == "first_cousin_pair":
        return Relationship.first_cousin_pair()
    if tag == "nuclear_family":
        return nuclear_family()
    if tag == "relative_pair":
        if k is None:
            raise PedCallValidationError("relative_pair needs k0, k1 and k2.")
        return Relationship.relative_pair(*k)
    raise PedCallValidationError(f"Unknown relationship '{tag}'; expected one of {', '.join(RELATIONSHIP_TAGS)}.")


# --- Parsers ---
def parse_counts(path):
    rows = []
    seen = {}
    for line_no, fields in _table_lines(path, COUNTS_HEADER):
        family_id, member_id, snp_id = fields[:3]
        for column, value in zip(COUNTS_HEADER[:3], fields[:3]):
            if not value:
                raise PedCallFormatError("Empty identifier.", path, line_no, column)
        depth = _parse_int(fields[3], path, line_no, "depth")
        variants = _parse_int(fields[4], path, line_no, "variants")
        if variants > depth:
            raise PedCallFormatError(f"variants {variants} exceed depth {depth}.", path, line_no, "variants")
        key = (family_id, member_id, snp_id)
        if key in seen:
            raise PedCallFormatError(f"Duplicate row for {key}, first seen on line {seen[key]}.", path, line_no)
        seen[key] = line_no
        rows.append(CountsRow(family_id, member_id, snp_id, depth, variants))
    logger.info(f"Read {len(rows)} count rows from '{path}'.")
    return CountsTable(tuple(rows))


def parse_pedigree(path):
    rows = []
    seen = set()
    for line_no, fields in _table_lines(path, PEDIGREE_HEADER):
        family_id, tag, members = fields[:3]
        if family_id in seen:
            raise PedCallFormatError(f"Duplicate family '{family_id}'.", path, line_no, "family_id")
        seen.add(family_id)
        k = None
        if any(fields[3:]):
            k = tuple(_parse_float(v, path, line_no, c) for v, c in zip(fields[3:], PEDIGREE_HEADER[3:]))
        try:
            rel = parse_relationship(tag, k)
        except PedCallValidationError as e:
            raise PedCallFormatError(str(e), path, line_no, "relationship") from e
        member_ids = tuple(members.split(","))
        if len(member_ids) != rel.num_members or not all(member_ids):
            raise PedCallFormatError(f"{tag} needs {rel.num_members} member ids, got '{members}'.",
                                     path, line_no, "member_ids")
        rows.append(PedigreeRow(family_id, rel, member_ids))
    return tuple(rows)


def build_dataset(counts, pedigree, snp_ids=None):
    """
    Dataset over the given SNPs (default: every SNP in counts order). A member
    without a row at some SNP has depth 0 there.
    """
    available = counts.snp_ids()
    snp_ids = available if snp_ids is None else tuple(snp_ids)
    missing = [s for s in snp_ids if s not in available]
    if missing:
        raise PedCallValidationError(f"SNPs {missing} have no read counts.")
    if not snp_ids:
        raise PedCallValidationError("No SNPs to analyse.")
    known = {(row.family_id, m) for row in pedigree for m in row.member_ids}
    stray = sorted({(r.family_id, r.member_id) for r in counts.rows} - known)
    if stray:
        raise PedCallValidationError(f"Counts for members missing from the pedigree: {stray[:5]}")
    lookup = counts.lookup()
    families = []
    for row in pedigree:
        depths = np.zeros((len(row.member_ids), len(snp_ids)), dtype=np.int64)
        variants = np.zeros_like(depths)
        for s, member in enumerate(row.member_ids):
            for m, snp in enumerate(snp_ids):
                depths[s, m], variants[s, m] = lookup.get((row.family_id, member, snp), (0, 0))
        if not depths.any():
            logger.warning(f"Family '{row.family_id}' has no reads at the selected SNPs.")
        families.append(Family(row.family_id, row.relationship, row.member_ids, depths, variants))
    return Dataset(tuple(families), len(snp_ids), snp_ids)


def read_params(path):
    snp_ids, mafs, alphas = [], [], []
    patterns, freqs = [], []
    converged = None
    section = "snps"
    header_seen = False
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                if line.strip() == "#haplotypes":
                    section = "haplotypes"
                    header_seen = False
                elif line.startswith("# converged="):
                    converged = line.split("=", 1)[1].strip() == "1"
                continue
            fields = tuple(line.split("\t"))
            expected = PARAMS_HEADER if section == "snps" else HAPLOTYPES_HEADER
            if not header_seen:
                if fields != expected:
                    raise PedCallFormatError(f"Expected header {'|'.join(expected)}.", path, line_no)
                header_seen = True
                continue
            if len(fields) != len(expected):
                raise PedCallFormatError(f"Expected {len(expected)} columns, got {len(fields)}.", path, line_no)
            if section == "snps":
                snp_ids.append(fields[0])
                mafs.append(_parse_float(fields[1], path, line_no, "maf_hat"))
                alphas.append(_parse_float(fields[2], path, line_no, "alpha_hat"))
            else:
                patterns.append(fields[0])
                freqs.append(_parse_float(fields[1], path, line_no, "frequency"))
    if not snp_ids:
        raise PedCallFormatError("No SNP parameters.", path)
    haplotypes = None
    if patterns:
        M = len(snp_ids)
        table = np.zeros(1 << M)
        for pattern, value in zip(patterns, freqs):
            if len(pattern) != M:
                raise PedCallFormatError(f"Haplotype pattern '{pattern}' does not cover {M} SNPs.", path)
            table[parse_haplotype_pattern(pattern)] = value
        total = table.sum()
        if np.any(table < 0) or abs(total - 1.0) > PARAMS_SUM_TOLERANCE:
            raise PedCallFormatError(f"Haplotype frequencies sum to {total:.12g}, expected 1.", path)
        haplotypes = FounderFrequencies(M, tuple(table / total))
    return ParamsFile(tuple(snp_ids), tuple(mafs), tuple(alphas), haplotypes, converged)


def read_panel(path):
    """Reference panel: a '#loci <M>' header then one 0/1 haplotype string per line."""
    num_loci = None
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#loci"):
                try:
                    num_loci = int(line.split()[1])
                except (IndexError, ValueError):
                    raise PedCallFormatError(f"Malformed header '{line}'.", path, line_no) from None
                continue
            if line.startswith("#"):
                continue
            if num_loci is None:
                raise PedCallFormatError("Haplotype before the '#loci' header.", path, line_no)
            if len(line) != num_loci or any(c not in "01" for c in line):
                raise PedCallFormatError(f"Expected a 0/1 string of length {num_loci}.", path, line_no)
            rows.append([int(c) for c in line])
    if not rows:
        raise PedCallFormatError("Panel holds no haplotypes.", path)
    logger.info(f"Read {len(rows)} panel haplotypes over {num_loci} loci from '{path}'.")
    return ReferencePanel(np.array(rows, dtype=np.int8))


# --- Scenarios ---
def _founders_from_dict(entry, base_dir):
    model = entry.get("model")
    if model == "maf":
        return HaplotypeFounders(FounderFrequencies.independent(entry["mafs"]))
    if model == "two_snp":
        p1, p2 = entry["mafs"]
        return HaplotypeFounders(two_snp_pi(p1, p2, entry["r"]))
    if model == "haplotypes":
        freqs = entry["freqs"]
        M = int(np.log2(len(freqs)))
        return HaplotypeFounders(FounderFrequencies(M, tuple(freqs)))
    if model == "panel":
        panel = read_panel(os.path.join(base_dir, entry["path"]))
        if entry.get("loci") is not None:
            panel = panel.restrict(entry["loci"])
        return PanelFounders(panel)
    if model == "fixation":
        return FixationFounders(entry["maf"], entry.get("F", 0.0))
    raise PedCallValidationError(f"Unknown founder model '{model}'.")


def scenario_from_dict(document, base_dir="."):
    try:
        rel_entry = document["relationship"]
        if isinstance(rel_entry, dict):
            relationship = parse_relationship(rel_entry["kind"], rel_entry.get("k"))
        else:
            relationship = parse_relationship(rel_entry)
        depth = dict(document.get("depth", {"model": "poisson", "mean": 10}))
        errors = dict(document.get("errors", {"model": "fixed", "alpha": [0.01]}))
        if "alpha" in errors:
            errors["alpha"] = tuple(errors["alpha"])
        return ScenarioConfig(
            relationship=relationship,
            families=int(document["families"]),
            founders=_founders_from_dict(document["founders"], base_dir),
            depth=DepthModel(**depth),
            errors=ErrorModel(**errors),
            replications=int(document.get("replications", 200)),
            seed=int(document.get("seed", 0)),
            score_members=document.get("score_members"),
            name=document.get("name"),
        )
    except KeyError as e:
        raise PedCallValidationError(f"Scenario is missing required field {e}.") from e
    except TypeError as e:
        raise PedCallValidationError(f"Malformed scenario: {e}") from e


def load_scenario(path):
    """ScenarioConfig from a JSON document; panel paths resolve relative to the file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError:
        logger.error(f"Scenario file '{path}' not found.")
        raise
    except json.JSONDecodeError as e:
        raise PedCallFormatError(f"Invalid JSON: {e.msg}", path, e.lineno) from e
    if not isinstance(document, dict):
        raise PedCallFormatError("Scenario must be a JSON object.", path)
    return scenario_from_dict(document, os.path.dirname(os.path.abspath(path)))
