import itertools
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from pedhapcall.genotype_model import (
    ErrorRates,
    FounderFrequencies,
    PedCallValidationError,
    Relationship,
    family_genotype_prior,
    nuclear_family,
)
from pedhapcall.simulator import (
    DepthModel,
    ErrorModel,
    FixationFounders,
    HaplotypeFounders,
    PanelFounders,
    ReferencePanel,
    ScenarioConfig,
    diplotypes_to_genotypes,
    draw_founder_diplotypes,
    haplotype_correlation,
    make_synthetic_panel,
    run_scenario,
    sample_founder_diplotype,
    simulate_families,
    simulate_family,
    simulate_reads,
    simulate_replication,
    two_snp_pi,
)


# --- Haplotype frequencies ---
def test_two_snp_pi_independence_and_perfect_linkage():
    independent = two_snp_pi(0.2, 0.3, 0.0)
    assert independent.freqs == pytest.approx(FounderFrequencies.independent([0.2, 0.3]).freqs, abs=1e-15)
    linked = two_snp_pi(0.25, 0.25, 1.0)
    # Index order "00", "01", "10", "11".
    assert linked.freqs == pytest.approx((0.75, 0.0, 0.0, 0.25), abs=1e-15)


def test_two_snp_pi_round_trip():
    founders = two_snp_pi(0.01, 0.01, math.sqrt(0.9))
    assert haplotype_correlation(founders) == pytest.approx(math.sqrt(0.9), abs=1e-12)
    assert founders.mafs() == pytest.approx((0.01, 0.01), abs=1e-15)


def test_two_snp_pi_round_trip_grid():
    checked = 0
    for p1, p2 in itertools.product(np.linspace(0.05, 0.5, 20), repeat=2):
        for r in np.linspace(-1.0, 1.0, 9):
            try:
                founders = two_snp_pi(p1, p2, r)
            except PedCallValidationError:
                continue
            checked += 1
            assert haplotype_correlation(founders) == pytest.approx(r, abs=1e-9)
            assert founders.mafs() == pytest.approx((p1, p2), abs=1e-9)
    assert checked > 1000


def test_haplotype_correlation_of_monomorphic_snp_is_zero():
    assert haplotype_correlation(FounderFrequencies(2, (1.0, 0.0, 0.0, 0.0))) == 0.0
    assert haplotype_correlation(FounderFrequencies.independent([0.0, 0.3])) == 0.0
    with pytest.raises(PedCallValidationError):
        haplotype_correlation(FounderFrequencies.from_maf(0.2))


def test_two_snp_pi_rejects_infeasible_correlation():
    with pytest.raises(PedCallValidationError, match="Infeasible"):
        two_snp_pi(0.01, 0.5, 0.9)


def test_fixation_founders():
    assert FixationFounders(0.3, 0.0).genotype_freqs() == pytest.approx((0.49, 0.42, 0.09))
    assert FixationFounders(0.3, 1.0).genotype_freqs() == pytest.approx((0.7, 0.0, 0.3))
    with pytest.raises(PedCallValidationError):
        FixationFounders(0.3, -0.9)


# --- Founder draws ---
def test_panel_draws_are_uniform_over_rows():
    panel = ReferencePanel(np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.int8))
    draws = draw_founder_diplotypes(PanelFounders(panel), np.random.default_rng(2), 50_000).ravel()
    counts = np.bincount(draws, minlength=4)
    expected = draws.size / 4
    se = math.sqrt(draws.size * 0.25 * 0.75)
    assert np.all(np.abs(counts - expected) <= 4 * se)


def test_panel_frequencies_and_restriction():
    panel = ReferencePanel(np.array([[0, 0, 1], [0, 1, 1], [0, 1, 0], [1, 1, 0]], dtype=np.int8))
    assert panel.mafs() == pytest.approx((0.25, 0.75, 0.5))
    assert panel.restrict([0, 2]).num_loci == 2
    assert panel.haplotype_frequencies([0]).freqs == pytest.approx((0.75, 0.25))
    with pytest.raises(PedCallValidationError):
        ReferencePanel(np.array([[0, 2]], dtype=np.int8))


def test_synthetic_panel_has_minor_coded_alleles():
    panel = make_synthetic_panel(12, 200, np.random.default_rng(9))
    assert panel.haplotypes.shape == (200, 12)
    assert np.all(np.asarray(panel.mafs()) <= 0.5)


def test_sample_founder_diplotype_fixation():
    rng = np.random.default_rng(12)
    draws = [sample_founder_diplotype(FixationFounders(0.3, 0.0), rng) for _ in range(20_000)]
    assert all(h1 <= h2 for h1, h2 in draws)
    counts = np.bincount([h1 + h2 for h1, h2 in draws], minlength=3)
    for observed, p in zip(counts, (0.49, 0.42, 0.09)):
        assert abs(observed / len(draws) - p) <= 4 * math.sqrt(p * (1 - p) / len(draws))
    inbred = [sample_founder_diplotype(FixationFounders(0.3, 1.0), rng) for _ in range(2_000)]
    assert all(h1 == h2 for h1, h2 in inbred)


def test_sib_haplotypes_follow_panel_frequencies():
    panel = ReferencePanel(np.array([[0, 0], [0, 0], [1, 1], [0, 1]], dtype=np.int8))
    model = PanelFounders(panel)
    assert simulate_family(Relationship.sib_pair(), model, np.random.default_rng(0)).shape == (2, 2)
    ids = simulate_families(Relationship.sib_pair(), model, np.random.default_rng(6), 40_000)
    sib1 = panel.haplotype_indices()[ids[:, 0, :]].ravel()
    observed = np.bincount(sib1, minlength=4) / sib1.size
    for h, p in enumerate(panel.haplotype_frequencies().freqs):
        assert abs(observed[h] - p) <= 4 * math.sqrt(p * (1 - p) / sib1.size) + 1e-12


def test_singleton_genotypes_follow_hardy_weinberg():
    rng = np.random.default_rng(5)
    ids = simulate_families(Relationship.singleton(), HaplotypeFounders(FounderFrequencies.from_maf(0.5)), rng, 100_000)
    g = diplotypes_to_genotypes(ids, np.array([[0], [1]]))[:, 0, 0]
    counts = np.bincount(g, minlength=3)
    for observed, p in zip(counts, (0.25, 0.5, 0.25)):
        assert abs(observed / g.size - p) <= 4 * math.sqrt(p * (1 - p) / g.size)


@pytest.mark.parametrize("rel, method", [
    (Relationship.sib_pair(), "icc"),
    (Relationship.sib_pair(), "gene_drop"),
    (Relationship.first_cousin_pair(), "icc"),
    (Relationship.first_cousin_pair(), "gene_drop"),
    (Relationship.trio(), "gene_drop"),
])
def test_family_genotypes_match_prior(rel, method):
    founders = FounderFrequencies.from_maf(0.2)
    rng = np.random.default_rng(17)
    count = 100_000
    ids = simulate_families(rel, HaplotypeFounders(founders), rng, count, method=method)
    genotypes = diplotypes_to_genotypes(ids, np.array([[0], [1]]))[..., 0]
    S = rel.num_members
    cells = list(itertools.product(range(3), repeat=S))
    index = {cell: i for i, cell in enumerate(cells)}
    observed = np.bincount([index[tuple(row)] for row in genotypes], minlength=len(cells))
    expected = np.array([family_genotype_prior([list(cell)], rel, founders) for cell in cells])
    support = expected > 0
    assert observed[~support].sum() == 0
    expected = expected[support] * count / expected[support].sum()
    assert chisquare(observed[support], expected).pvalue > 1e-3


def test_nuclear_family_gene_drop_matches_prior():
    rel = nuclear_family()
    founders = FounderFrequencies.from_maf(0.3)
    ids = simulate_families(rel, HaplotypeFounders(founders), np.random.default_rng(23), 50_000, method="gene_drop")
    offspring = diplotypes_to_genotypes(ids, np.array([[0], [1]]))[:, 2:, 0]
    sib = Relationship.sib_pair()
    cells = list(itertools.product(range(3), repeat=2))
    observed = np.array([np.sum((offspring[:, 0] == a) & (offspring[:, 1] == b)) for a, b in cells])
    expected = np.array([family_genotype_prior([[a, b]], sib, founders) for a, b in cells]) * offspring.shape[0]
    assert chisquare(observed, expected * observed.sum() / expected.sum()).pvalue > 1e-3


def test_fixation_founders_need_a_pedigree():
    model = FixationFounders(0.2, 0.5)
    with pytest.raises(PedCallValidationError):
        simulate_families(Relationship.sib_pair(), model, np.random.default_rng(0), 5, method="icc")
    with pytest.raises(PedCallValidationError):
        ScenarioConfig(Relationship.relative_pair(0.5, 0.5, 0.0), 10, model)
    ids = simulate_families(Relationship.singleton(), model, np.random.default_rng(0), 1000)
    g = diplotypes_to_genotypes(ids, model.allele_table())[:, 0, 0]
    assert set(np.unique(g)) <= {0, 1, 2}


# --- Reads ---
def test_zero_truncated_poisson_depths():
    depths = DepthModel("poisson", 10.0).draw(np.random.default_rng(1), 1_000_000)
    assert depths.min() >= 1
    expected = 10.0 / (1.0 - math.exp(-10.0))
    assert abs(depths.mean() - expected) <= 4 * math.sqrt(10.0 / depths.size)
    assert DepthModel("poisson", 10.0).expected_depth == pytest.approx(expected)


def test_fixed_depth_and_validation():
    assert np.all(DepthModel("fixed", depth=30).draw(np.random.default_rng(0), (4, 2)) == 30)
    with pytest.raises(PedCallValidationError):
        DepthModel("poisson", 0.0)
    with pytest.raises(PedCallValidationError):
        DepthModel("negative_binomial", 5.0)


def test_variant_read_fractions():
    rng = np.random.default_rng(8)
    size = 200_000
    _, het_variants = simulate_reads(np.ones((size, 1), dtype=np.int8), DepthModel("fixed", depth=10),
                                     ErrorRates((0.05,)), rng)
    assert het_variants.mean() / 10 == pytest.approx(0.5, abs=0.005)
    _, hom_variants = simulate_reads(np.zeros((size, 1), dtype=np.int8), DepthModel("fixed", depth=10),
                                     ErrorRates((0.05,)), rng)
    assert hom_variants.mean() == pytest.approx(0.5, abs=0.01)
    _, alt_variants = simulate_reads(np.full((size, 1), 2, dtype=np.int8), DepthModel("fixed", depth=10),
                                     ErrorRates((0.05,)), rng)
    assert alt_variants.mean() == pytest.approx(9.5, abs=0.01)


def test_error_models():
    rng = np.random.default_rng(0)
    rates = ErrorModel("uniform", low=0.001, high=0.1).rates(rng, 5)
    assert len(rates) == 5
    assert all(0.001 <= a <= 0.1 for a in rates.values)
    assert ErrorModel("fixed", (0.02,)).rates(rng, 3).values == (0.02, 0.02, 0.02)
    with pytest.raises(PedCallValidationError):
        ErrorModel("fixed", (0.02, 0.03)).rates(rng, 3)
    with pytest.raises(PedCallValidationError):
        ErrorModel("uniform", low=0.2, high=0.1)


# --- Scenarios ---
def test_replications_are_reproducible(make_scenario):
    scenario = make_scenario(families=20, replications=3, seed=42)
    first, truth_first = simulate_replication(scenario, 1)
    second, truth_second = simulate_replication(scenario, 1)
    assert first.digest() == second.digest()
    assert np.array_equal(truth_first.genotypes, truth_second.genotypes)
    other, _ = simulate_replication(scenario, 2)
    assert other.digest() != first.digest()


def test_run_scenario_streams_replications(make_scenario):
    scenario = make_scenario(families=10, replications=3, seed=8,
                             errors=ErrorModel("uniform", low=0.001, high=0.1))
    runs = list(run_scenario(scenario))
    assert len(runs) == 3
    for k, (data, truth) in enumerate(runs):
        assert data.digest() == simulate_replication(scenario, k)[0].digest()
        assert 0.001 <= truth.alpha.values[0] <= 0.1
    assert runs[0][1].alpha != runs[1][1].alpha


def test_dataset_layout_and_truth(make_scenario):
    data, truth = simulate_replication(make_scenario(families=5), 0)
    assert data.snp_ids == ("snp1",)
    assert data.families[0].family_id == "F0001"
    assert data.families[0].member_ids == ("F0001_father", "F0001_mother", "F0001_child")
    assert truth.genotypes.shape == (5, 3, 1)
    assert truth.theta.founders.mafs() == pytest.approx((0.2,))
    rows = list(truth.genotype_rows())
    assert len(rows) == 15
    assert rows[0][:3] == ("F0001", "F0001_father", "snp1")
    pairs = truth.diplotypes
    assert np.array_equal(pairs.sum(axis=-1), truth.genotypes[..., 0])


def test_panel_scenario_shapes():
    panel = make_synthetic_panel(4, 50, np.random.default_rng(1))
    scenario = ScenarioConfig(Relationship.sib_pair(), 10, PanelFounders(panel), replications=1)
    data, truth = simulate_replication(scenario, 0)
    assert data.num_loci == 4
    assert truth.genotypes.shape == (10, 2, 4)


def test_expected_reads_per_snp(make_scenario):
    sibs = make_scenario(relationship=Relationship.sib_pair(), families=50, depth=10.0)
    assert sibs.expected_reads_per_snp() == pytest.approx(1000.0, rel=1e-3)
    family = make_scenario(relationship=nuclear_family(), families=50, depth=5.0)
    assert family.expected_reads_per_snp() == pytest.approx(1000.0, rel=1e-2)


def test_scenario_validation(make_scenario):
    with pytest.raises(PedCallValidationError):
        make_scenario(families=0)
    with pytest.raises(PedCallValidationError):
        make_scenario(score_members=(3,))
