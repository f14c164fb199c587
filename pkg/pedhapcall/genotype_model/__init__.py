# __init__.py — MIT License
# See LICENSE.txt for full terms.

"""
Genotype Model Package.

Pedigree priors over IBD configuration classes, the binomial read model, EM
estimation of founder haplotype frequencies and read error rates, and
posterior-mode genotype and haplotype calling.
"""

# Re-export custom exceptions so they can be imported from the package root
from .common import (
    PedCallError, PedCallValidationError, PedCallCapacityError, PedCallFormatError,
    DEFAULT_CONFIGURATION_CAP, DEFAULT_MAX_HAPLOTYPE_LOCI,
)

from .pedigree_prior import (
    RelationshipKind, Relationship, IccConfiguration, IccDistribution, FounderFrequencies,
    ConfigurationTable,
    icc_distribution, nuclear_family_icc, nuclear_family, pair_genotype_prior,
    configuration_table, count_configurations, enumerate_family_configurations, family_genotype_prior,
    num_haplotypes, haplotype_allele, haplotype_pattern, parse_haplotype_pattern, haplotype_alleles,
    diplotype_genotypes, unordered_diplotype,
    SIB_PAIR_IBD, FIRST_COUSIN_IBD,
)
from .read_model import (
    ReadObservation, ErrorRates,
    read_log_likelihood, individual_multilocus_log_likelihood, genotype_log_likelihoods,
    log_binomial_coefficient,
)
from .em_engine import (
    ModelParams, Family, Dataset, SufficientStats, EStepResult, FitReport, EmConfig, SingleSnpFit,
    family_log_likelihood, e_step, m_step, fit, fit_single_snp_unrelated, relative_change, on_boundary,
)
from .caller import (
    CallerConfig, CallResult, PairSelection, PipelineConfig, PipelineResult,
    call_dataset, call_family, call_dataset_haplotypes, call_diploid_haplotypes,
    genotype_correlation, correlation_matrix, select_partner, ld_pipeline,
)

__all__ = [
    # Exceptions
    "PedCallError", "PedCallValidationError", "PedCallCapacityError", "PedCallFormatError",
    # Constants
    "DEFAULT_CONFIGURATION_CAP", "DEFAULT_MAX_HAPLOTYPE_LOCI", "SIB_PAIR_IBD", "FIRST_COUSIN_IBD",
    # Pedigree priors
    "RelationshipKind", "Relationship", "IccConfiguration", "IccDistribution", "FounderFrequencies",
    "ConfigurationTable",
    "icc_distribution", "nuclear_family_icc", "nuclear_family", "pair_genotype_prior",
    "configuration_table", "count_configurations", "enumerate_family_configurations", "family_genotype_prior",
    "num_haplotypes", "haplotype_allele", "haplotype_pattern", "parse_haplotype_pattern", "haplotype_alleles",
    "diplotype_genotypes", "unordered_diplotype",
    # Read model
    "ReadObservation", "ErrorRates",
    "read_log_likelihood", "individual_multilocus_log_likelihood", "genotype_log_likelihoods",
    "log_binomial_coefficient",
    # EM
    "ModelParams", "Family", "Dataset", "SufficientStats", "EStepResult", "FitReport", "EmConfig", "SingleSnpFit",
    "family_log_likelihood", "e_step", "m_step", "fit", "fit_single_snp_unrelated", "relative_change",
    "on_boundary",
    # Calling
    "CallerConfig", "CallResult", "PairSelection", "PipelineConfig", "PipelineResult",
    "call_dataset", "call_family", "call_dataset_haplotypes", "call_diploid_haplotypes",
    "genotype_correlation", "correlation_matrix", "select_partner", "ld_pipeline",
]
