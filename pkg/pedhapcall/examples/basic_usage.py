import numpy as np

from pedhapcall.evaluation import score, stack_calls
from pedhapcall.genotype_model import EmConfig, FounderFrequencies, Relationship, call_dataset, fit
from pedhapcall.simulator import (
    DepthModel,
    ErrorModel,
    HaplotypeFounders,
    ScenarioConfig,
    simulate_replication,
)

# 100 parent-offspring trios at a SNP with minor allele frequency 10%,
# 5% read errors and about 10 reads per person.
scenario = ScenarioConfig(
    relationship=Relationship.trio(),
    families=100,
    founders=HaplotypeFounders(FounderFrequencies.from_maf(0.1)),
    depth=DepthModel("poisson", 10.0),
    errors=ErrorModel("fixed", (0.05,)),
    replications=1,
    seed=7,
)

data, truth = simulate_replication(scenario, 0)
print(f"Simulated {len(data)} trios, {data.num_loci} SNP")

# Step 1: estimate the allele frequency and read error rate from the reads themselves.
report = fit(data, EmConfig())
print(f"MAF estimate {report.theta_hat.founders.mafs()[0]:.4f}, "
      f"error rate estimate {report.theta_hat.errors.values[0]:.4f}, "
      f"{report.iterations} EM iterations, converged={report.converged}")

# Step 2: call every member's genotype as the family posterior mode.
results = call_dataset(data, report.theta_hat)
first = results[0]
for member, snp, call, marginal in first.rows():
    print(f"{member} {snp}: call {call}, posterior {np.round(marginal, 3)}")

# Step 3: compare with the simulated genotypes.
calls = stack_calls(results, truth.genotypes.shape)
errors = score(calls, truth.genotypes)
print(f"Incorrect calls: {errors.overall_pct:.2f}% "
      f"(heterozygotes {errors.het_pct:.2f}%, homozygotes {errors.hom_pct:.2f}%)")

# The same data with every member treated as unrelated.
unrelated = data.as_unrelated()
unrelated_report = fit(unrelated, EmConfig())
unrelated_calls = stack_calls(call_dataset(unrelated, unrelated_report.theta_hat), truth.genotypes.shape)
print(f"Ignoring relationships: {score(unrelated_calls, truth.genotypes).overall_pct:.2f}% incorrect")
