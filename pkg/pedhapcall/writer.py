# writer.py — MIT License
# See LICENSE.txt for full terms.

"""
Emits tab-separated outputs: read counts, pedigrees, calls, fitted parameters,
simulated truth and comparison tables. Every writer produces a deterministic
row order, and randomized workflows record their seed as a '# seed=' header.
"""
import logging

from .genotype_model import haplotype_pattern
from .reader import (
    COUNTS_HEADER,
    HAPLOTYPES_HEADER,
    PARAMS_HEADER,
    PEDIGREE_HEADER,
    CountsRow,
    CountsTable,
)

logger = logging.getLogger(__name__)

CALLS_HEADER = ("family_id", "member_id", "snp_id", "call", "p_g0", "p_g1", "p_g2", "tie_flag")
TRUTH_HEADER = ("family_id", "member_id", "snp_id", "genotype")
COMPARISON_HEADER = ("scenario", "method", "snp_id", "replications", "overall_pct", "het_pct", "hom_pct",
                     "overall_se", "errors", "total", "het_errors", "het_total", "hom_errors", "hom_total",
                     "nonconverged")


def _write_rows(path, header, rows, seed=None):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if seed is not None:
            f.write(f"# seed={seed}\n")
        f.write("\t".join(header) + "\n")
        count = 0
        for row in rows:
            f.write("\t".join(str(v) for v in row) + "\n")
            count += 1
    logger.info(f"Wrote {count} rows to '{path}'.")


def counts_table(dataset):
    """CountsTable of a dataset, rows in family, member, SNP order."""
    rows = []
    for family in dataset.families:
        for s, member in enumerate(family.member_ids):
            for m, snp in enumerate(dataset.snp_ids):
                rows.append(CountsRow(family.family_id, member, snp,
                                      int(family.depths[s, m]), int(family.variants[s, m])))
    return CountsTable(tuple(rows))


def write_counts(path, table, seed=None):
    _write_rows(path, COUNTS_HEADER,
                ((r.family_id, r.member_id, r.snp_id, r.depth, r.variants) for r in table.rows), seed)


def write_pedigree(path, dataset, seed=None):
    def rows():
        for family in dataset.families:
            rel = family.relationship
            k = [f"{v:g}" for v in rel.k] if rel.k is not None else ["", "", ""]
            yield (family.family_id, rel.tag, ",".join(family.member_ids), *k)
    _write_rows(path, PEDIGREE_HEADER, rows(), seed)


def _fmt(p):
    # Clamp tiny negative round-off so "-0.000000" never appears.
    return f"{max(float(p), 0.0):.6f}"


def emit_calls(path, results, seed=None):
    """
    One row per (family, member, SNP) across CallResults, sorted by
    (family_id, member_id, snp_id), marginals with 6 decimals.
    """
    rows = []
    for result in results:
        for member, snp, call, marginal in result.rows():
            rows.append((result.family_id, member, snp, call, _fmt(marginal[0]), _fmt(marginal[1]),
                         _fmt(marginal[2]), int(result.tie_flag)))
    rows.sort(key=lambda row: row[:3])
    _write_rows(path, CALLS_HEADER, rows, seed)


def write_params(path, theta, snp_ids, converged=True, haplotypes=False, seed=None):
    """Per-SNP MAF and error rate; with haplotypes, a '#haplotypes' section over all listed SNPs."""
    mafs = theta.founders.mafs()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if seed is not None:
            f.write(f"# seed={seed}\n")
        f.write("\t".join(PARAMS_HEADER) + "\n")
        for snp, maf, alpha in zip(snp_ids, mafs, theta.errors.values):
            f.write(f"{snp}\t{maf:.10g}\t{alpha:.10g}\n")
        if haplotypes:
            f.write("#haplotypes\n")
            f.write("\t".join(HAPLOTYPES_HEADER) + "\n")
            for h, freq in enumerate(theta.founders.freqs):
                f.write(f"{haplotype_pattern(h, theta.num_loci)}\t{freq:.17g}\n")
        f.write(f"# converged={int(bool(converged))}\n")
    logger.info(f"Wrote parameters for {len(snp_ids)} SNPs to '{path}'.")


def write_truth(path, truth, seed=None):
    _write_rows(path, TRUTH_HEADER, truth.genotype_rows(), seed)


def _pct(value):
    return "NA" if value is None else f"{value:.4f}"


def write_comparison_tsv(path, rows, seed=None):
    def lines():
        for row in rows:
            for method in row.methods:
                reports = list(zip(row.snp_ids, row.per_snp[method]))
                if len(reports) > 1:
                    reports.append(("all", row.pooled[method]))
                for snp, report in reports:
                    se = report.standard_error()
                    yield (row.scenario, method, snp, row.replications, _pct(report.overall_pct),
                           _pct(report.het_pct), _pct(report.hom_pct), _pct(se),
                           report.overall.errors, report.overall.total, report.het.errors, report.het.total,
                           report.hom.errors, report.hom.total, row.nonconverged[method])
    _write_rows(path, COMPARISON_HEADER, lines(), seed)
