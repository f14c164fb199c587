# evaluation.py — MIT License
# See LICENSE.txt for full terms.

"""
Scores calls against simulated truth and runs method comparisons over
replicated scenarios.

Methods:
    pedgc     single-SNP model using the family relationship
    seqem     single-SNP model with every member treated as unrelated
    hapgc     multi-SNP model with every member treated as unrelated
    pedhapgc  multi-SNP model using the family relationship

Two-SNP scenarios fit the two-locus model once and call each SNP from it;
longer regions go through the LD pipeline.
"""
import functools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .genotype_model import (
    CallerConfig,
    EmConfig,
    FounderFrequencies,
    PedCallValidationError,
    PipelineConfig,
    Relationship,
    call_dataset,
    call_dataset_haplotypes,
    fit,
    fit_single_snp_unrelated,
    ld_pipeline,
    nuclear_family,
)
from .simulator import (
    DepthModel,
    ErrorModel,
    FixationFounders,
    HaplotypeFounders,
    ScenarioConfig,
    simulate_replication,
)

logger = logging.getLogger(__name__)

METHODS = ("pedgc", "seqem", "hapgc", "pedhapgc")
_UNRELATED_METHODS = {"seqem", "hapgc"}
_HAPLOTYPE_METHODS = {"hapgc", "pedhapgc"}
CROSS_CHECK_TOLERANCE = 1e-3


# --- Domain Types ---
@dataclass(frozen=True)
class StratumTally:
    errors: int = 0
    total: int = 0

    @property
    def pct(self):
        """Percent incorrect calls; None for an empty stratum."""
        return 100.0 * self.errors / self.total if self.total else None

    def __add__(self, other):
        return StratumTally(self.errors + other.errors, self.total + other.total)


@dataclass(frozen=True)
class ErrorReport:
    overall: StratumTally
    het: StratumTally
    hom: StratumTally
    # One (overall, het, hom) percentage triple per replication.
    per_replication: tuple = ()

    @property
    def overall_pct(self):
        return self.overall.pct

    @property
    def het_pct(self):
        return self.het.pct

    @property
    def hom_pct(self):
        return self.hom.pct

    def replicate_values(self, stratum="overall"):
        column = ("overall", "het", "hom").index(stratum)
        return np.array([row[column] for row in self.per_replication if row[column] is not None], dtype=float)

    def standard_error(self, stratum="overall"):
        values = self.replicate_values(stratum)
        if values.size < 2:
            return None
        return float(values.std(ddof=1) / math.sqrt(values.size))

    @classmethod
    def combine(cls, reports):
        reports = list(reports)
        overall, het, hom = StratumTally(), StratumTally(), StratumTally()
        rows = []
        for report in reports:
            overall += report.overall
            het += report.het
            hom += report.hom
            rows.extend(report.per_replication)
        return cls(overall, het, hom, tuple(rows))


@dataclass(frozen=True)
class MethodOutcome:
    per_snp: tuple   # ErrorReport per SNP
    pooled: ErrorReport
    converged: bool


@dataclass(frozen=True)
class ComparisonRow:
    scenario: str
    methods: tuple
    snp_ids: tuple
    per_snp: dict     # method -> tuple of ErrorReport
    pooled: dict      # method -> ErrorReport
    nonconverged: dict
    replications: int


@dataclass(frozen=True)
class EvaluationConfig:
    methods: tuple = ("pedgc", "seqem")
    em: EmConfig = field(default_factory=lambda: EmConfig(tol=1e-6, max_restarts=2))
    caller: CallerConfig = field(default_factory=CallerConfig)
    min_r2: float = 0.5
    penalty: float = 1.0
    # Call with the simulating parameters instead of refitting.
    known_theta: bool = False
    # Compare every seqem fit against the standalone single-SNP EM.
    cross_check: bool = False
    threads: int = None

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise PedCallValidationError(f"Unknown methods {unknown}; choose from {', '.join(METHODS)}.")
        object.__setattr__(self, "methods", tuple(self.methods))

    @property
    def pipeline(self):
        return PipelineConfig(min_r2=self.min_r2, penalty=self.penalty, em=self.em, caller=self.caller)


# --- Scoring ---
def score(calls, truth):
    """Error report of called genotypes against true genotypes of the same shape."""
    calls = np.asarray(calls)
    truth = np.asarray(truth)
    if calls.shape != truth.shape:
        raise PedCallValidationError(f"Calls of shape {calls.shape} do not align with truth of shape {truth.shape}.")
    wrong = calls != truth
    het = truth == 1
    overall = StratumTally(int(wrong.sum()), int(wrong.size))
    het_tally = StratumTally(int(wrong[het].sum()), int(het.sum()))
    hom_tally = StratumTally(int(wrong[~het].sum()), int((~het).sum()))
    return ErrorReport(overall, het_tally, hom_tally, ((overall.pct, het_tally.pct, hom_tally.pct),))


def stack_calls(results, shape):
    """Genotype array of the given (I, S, M) shape from CallResults in dataset order."""
    return np.concatenate([res.genotypes for res in results], axis=0).reshape(shape)


# --- Methods ---
def _fit_or_known(data, truth_theta, config, loci):
    if config.known_theta and truth_theta is not None:
        return truth_theta.restrict(loci), True
    report = fit(data, config.em)
    return report.theta_hat, report.converged


def cross_check_single_snp(data, theta, config):
    """
    Largest absolute gap in (MAF, alpha) between theta, fitted on unrelated
    individuals at one SNP, and the standalone single-SNP EM on the same reads.
    """
    if data.num_loci != 1 or any(f.relationship.num_members != 1 for f in data.families):
        raise PedCallValidationError("The single-SNP cross-check needs unrelated individuals at one SNP.")
    depths = np.concatenate([f.depths[:, 0] for f in data.families])
    variants = np.concatenate([f.variants[:, 0] for f in data.families])
    em = config.em
    direct = fit_single_snp_unrelated(depths, variants, tol=em.tol, max_iter=em.max_iter,
                                      init_maf=em.init_maf, init_alpha=em.init_alpha)
    gap = max(abs(direct.maf - theta.founders.mafs()[0]), abs(direct.alpha - theta.errors.values[0]))
    if gap > CROSS_CHECK_TOLERANCE:
        logger.warning(f"seqem fit differs from the standalone single-SNP EM by {gap:.3g} "
                       f"(MAF {direct.maf:.6f}, alpha {direct.alpha:.6f}).")
    return gap


def call_with_method(method, data, truth, config):
    """(I, S, M) genotype calls and a convergence flag for one method."""
    I, S, M = truth.genotypes.shape
    working = data.as_unrelated() if method in _UNRELATED_METHODS else data
    shape = (I, S, 1)
    calls = np.empty((I, S, M), dtype=np.int8)
    converged = True

    if method not in _HAPLOTYPE_METHODS:
        for m in range(M):
            sub = working.select_loci([m])
            theta, ok = _fit_or_known(sub, truth.theta, config, [m])
            converged &= ok
            if method == "seqem" and config.cross_check and not config.known_theta:
                cross_check_single_snp(sub, theta, config)
            calls[:, :, m:m + 1] = stack_calls(call_dataset(sub, theta, config.caller), shape)
        return calls, converged

    if M < 2:
        raise PedCallValidationError(f"Method {method} needs at least two SNPs.")
    if M == 2:
        theta, converged = _fit_or_known(working, truth.theta, config, [0, 1])
        for m in range(M):
            calls[:, :, m:m + 1] = stack_calls(call_dataset(working, theta, config.caller, loci=[m]), shape)
        return calls, converged

    result = ld_pipeline(working, config.pipeline)
    for m in range(M):
        calls[:, :, m:m + 1] = stack_calls(result.calls[m], shape)
    return calls, result.converged


def evaluate_replication(scenario, config, replication):
    """Method name -> MethodOutcome for one simulated replication."""
    data, truth = simulate_replication(scenario, replication)
    digest = data.digest()
    members = list(scenario.score_members or range(scenario.relationship.num_members))
    truth_g = truth.genotypes[:, members, :]
    outcomes = {}
    for method in config.methods:
        calls, converged = call_with_method(method, data, truth, config)
        assert data.digest() == digest, f"Dataset changed while running {method}"
        calls = calls[:, members, :]
        per_snp = tuple(score(calls[..., m], truth_g[..., m]) for m in range(truth_g.shape[-1]))
        outcomes[method] = MethodOutcome(per_snp, score(calls, truth_g), converged)
    return outcomes


def _map_replications(worker, replications, threads):
    if threads == 1 or replications == 1:
        return list(map(worker, range(replications)))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, range(replications)))


def run_comparison(scenario, config=None):
    """
    Simulates every replication of the scenario, runs each method on the same
    dataset and aggregates error reports. Results do not depend on the number
    of worker processes.
    """
    config = config or EvaluationConfig()
    worker = functools.partial(evaluate_replication, scenario, config)
    logger.info(f"Comparing {', '.join(config.methods)} on '{scenario.label}' over {scenario.replications} replications.")
    outcomes = _map_replications(worker, scenario.replications, config.threads)
    per_snp, pooled, nonconverged = {}, {}, {}
    for method in config.methods:
        runs = [outcome[method] for outcome in outcomes]
        per_snp[method] = tuple(ErrorReport.combine(run.per_snp[m] for run in runs)
                                for m in range(scenario.num_loci))
        pooled[method] = ErrorReport.combine(run.pooled for run in runs)
        nonconverged[method] = sum(not run.converged for run in runs)
        if nonconverged[method]:
            logger.warning(f"{method}: {nonconverged[method]} of {scenario.replications} fits did not converge.")
    return ComparisonRow(scenario.label, config.methods, tuple(f"snp{m + 1}" for m in range(scenario.num_loci)),
                         per_snp, pooled, nonconverged, scenario.replications)


def paired_improvement(row, better, worse, snp=None):
    """
    One-sided paired t-test that method `better` has lower per-replication
    overall error than `worse`. Returns (mean difference, p-value).
    """
    pick = (lambda method: row.pooled[method]) if snp is None else (lambda method: row.per_snp[method][snp])
    a = np.array([r[0] for r in pick(better).per_replication], dtype=float)
    b = np.array([r[0] for r in pick(worse).per_replication], dtype=float)
    result = stats.ttest_rel(a, b, alternative="less")
    return float(np.mean(a - b)), float(result.pvalue)


# --- Experiments ---
def read_budget_experiment(maf=0.1, alpha=0.01, families=50, depth_sibs=10.0, depth_family=5.0,
                           replications=200, seed=0, config=None):
    """
    Sib pairs sequenced alone versus sib pairs sequenced with both parents at
    the same total number of reads, scored on the sibs in both arms.
    """
    config = config or EvaluationConfig(methods=("pedgc",))
    sibs = Relationship.sib_pair()
    family = nuclear_family()
    total_a = families * sibs.num_members * depth_sibs
    total_b = families * family.num_members * depth_family
    if not math.isclose(total_a, total_b):
        raise PedCallValidationError(f"Arms differ in expected reads per SNP: {total_a} vs {total_b}.")
    founders = HaplotypeFounders(FounderFrequencies.from_maf(maf))
    errors = ErrorModel("fixed", (alpha,))
    arm_a = ScenarioConfig(sibs, families, founders, DepthModel("poisson", depth_sibs), errors,
                           replications, seed, name=f"sibs only, depth {depth_sibs:g}")
    arm_b = ScenarioConfig(family, families, founders, DepthModel("poisson", depth_family), errors,
                           replications, seed, score_members=(2, 3),
                           name=f"sibs and parents, depth {depth_family:g}")
    return run_comparison(arm_a, config), run_comparison(arm_b, config)


@dataclass(frozen=True)
class HaplotypeCallingReport:
    scenario: str
    method: str
    diplotypes: StratumTally
    genotypes: ErrorReport


def _haplotype_replication(scenario, config, method, replication):
    data, truth = simulate_replication(scenario, replication)
    if truth.diplotypes is None:
        raise PedCallValidationError("Diplotype truth is not tabulated for this region.")
    working = data.as_unrelated() if method in _UNRELATED_METHODS else data
    theta, _ = _fit_or_known(working, truth.theta, config, list(range(scenario.num_loci)))
    results = call_dataset_haplotypes(working, theta, config.caller)
    called = np.array([res.diplotypes for res in results]).reshape(truth.diplotypes.shape)
    wrong = np.any(called != truth.diplotypes, axis=-1)
    genotypes = stack_calls(results, truth.genotypes.shape)
    return StratumTally(int(wrong.sum()), int(wrong.size)), score(genotypes, truth.genotypes)


def run_haplotype_calling(scenario, method="pedhapgc", config=None):
    """Diplotype and genotype error rates of joint diploid haplotype calls (2 or 3 SNPs)."""
    config = config or EvaluationConfig(methods=(method,))
    if method not in _HAPLOTYPE_METHODS:
        raise PedCallValidationError(f"Haplotype calling runs hapgc or pedhapgc, not {method}.")
    if isinstance(scenario.founders, FixationFounders):
        raise PedCallValidationError("Haplotype calling needs a multi-locus founder model.")
    worker = functools.partial(_haplotype_replication, scenario, config, method)
    outcomes = _map_replications(worker, scenario.replications, config.threads)
    diplotypes = StratumTally()
    for tally, _ in outcomes:
        diplotypes += tally
    genotypes = ErrorReport.combine(report for _, report in outcomes)
    return HaplotypeCallingReport(scenario.label, method, diplotypes, genotypes)


# --- Presentation ---
def _format_pct(value):
    return "-" if value is None else f"{value:.2f}"


def _format_cell(report):
    se = report.standard_error()
    spread = "" if se is None else f" ±{se:.2f}"
    return f"{_format_pct(report.overall_pct)} ({_format_pct(report.het_pct)}/{_format_pct(report.hom_pct)}){spread}"


def format_table(rows):
    """Aligned text table: one line per scenario, method and SNP."""
    header = ("scenario", "method", "snp", "overall (het/hom) ±se", "nonconverged")
    lines = [header]
    for row in rows:
        for method in row.methods:
            for snp, report in zip(row.snp_ids, row.per_snp[method]):
                lines.append((row.scenario, method, snp, _format_cell(report), str(row.nonconverged[method])))
    widths = [max(len(line[c]) for line in lines) for c in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in lines)

