import numpy as np
import pytest

from pedhapcall.genotype_model import FounderFrequencies, Relationship
from pedhapcall.simulator import (
    DepthModel,
    ErrorModel,
    HaplotypeFounders,
    ScenarioConfig,
    two_snp_pi,
)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def make_scenario():
    """Factory for small single-SNP scenarios; keyword arguments override the defaults."""
    def _make(relationship=None, families=100, maf=0.2, alpha=0.05, depth=10.0, replications=1, seed=1, **kwargs):
        founders = kwargs.pop("founders", None) or HaplotypeFounders(FounderFrequencies.from_maf(maf))
        return ScenarioConfig(
            relationship=relationship or Relationship.trio(),
            families=families,
            founders=founders,
            depth=kwargs.pop("depth_model", None) or DepthModel("poisson", depth),
            errors=kwargs.pop("errors", None) or ErrorModel("fixed", (alpha,)),
            replications=replications,
            seed=seed,
            **kwargs,
        )
    return _make


@pytest.fixture
def two_snp_scenario(make_scenario):
    """Unrelated individuals at two SNPs in strong LD."""
    return make_scenario(
        relationship=Relationship.singleton(),
        families=100,
        founders=HaplotypeFounders(two_snp_pi(0.2, 0.2, 0.9)),
        errors=ErrorModel("fixed", (0.02, 0.05)),
        replications=2,
    )
