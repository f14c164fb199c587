import json
from pathlib import Path

import numpy as np
import pytest

from pedhapcall.genotype_model import (
    CallResult,
    EmConfig,
    ErrorRates,
    FounderFrequencies,
    ModelParams,
    PedCallFormatError,
    PedCallValidationError,
    Relationship,
    fit,
)
from pedhapcall.reader import (
    COUNTS_HEADER,
    PEDIGREE_HEADER,
    build_dataset,
    load_scenario,
    parse_counts,
    parse_pedigree,
    read_panel,
    read_params,
)
from pedhapcall.simulator import FixationFounders, HaplotypeFounders, PanelFounders, simulate_replication
from pedhapcall.writer import (
    CALLS_HEADER,
    counts_table,
    emit_calls,
    write_counts,
    write_params,
    write_pedigree,
)


def _write(path, header, rows, comments=()):
    lines = list(comments) + ["\t".join(header)] + ["\t".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# --- Counts ---
def test_parse_counts(tmp_path):
    path = _write(tmp_path / "c.tsv", COUNTS_HEADER, [("F1", "a", "rs1", 10, 3), ("F1", "b", "rs1", 0, 0)],
                  comments=["# seed=4", ""])
    table = parse_counts(path)
    assert len(table.rows) == 2
    assert table.rows[0].depth == 10 and table.rows[0].variants == 3
    assert table.snp_ids() == ("rs1",)


@pytest.mark.parametrize("row, line, column", [
    (("F1", "a", "rs1", 3, 4), 3, "variants"),
    (("F1", "a", "rs1", "ten", 4), 3, "depth"),
    (("F1", "a", "rs1", -1, 0), 3, "depth"),
    (("", "a", "rs1", 3, 1), 3, "family_id"),
])
def test_parse_counts_reports_location(tmp_path, row, line, column):
    path = _write(tmp_path / "c.tsv", COUNTS_HEADER, [("F1", "b", "rs1", 5, 1), row])
    with pytest.raises(PedCallFormatError) as excinfo:
        parse_counts(path)
    assert excinfo.value.line == line
    assert excinfo.value.column == column
    assert f"line {line}" in str(excinfo.value)


def test_parse_counts_rejects_duplicates_and_bad_header(tmp_path):
    path = _write(tmp_path / "dup.tsv", COUNTS_HEADER, [("F1", "a", "rs1", 5, 1), ("F1", "a", "rs1", 6, 1)])
    with pytest.raises(PedCallFormatError, match="Duplicate"):
        parse_counts(path)
    path = _write(tmp_path / "hdr.tsv", ("family", "member", "snp", "n", "y"), [])
    with pytest.raises(PedCallFormatError, match="header"):
        parse_counts(path)
    path = _write(tmp_path / "cols.tsv", COUNTS_HEADER, [("F1", "a", "rs1", 5)])
    with pytest.raises(PedCallFormatError, match="columns"):
        parse_counts(path)


def test_counts_round_trip(tmp_path, make_scenario):
    data, _ = simulate_replication(make_scenario(families=5), 0)
    table = counts_table(data)
    path = tmp_path / "counts.tsv"
    write_counts(path, table, seed=3)
    text = path.read_text(encoding="utf-8")
    assert text.startswith("# seed=3\n")
    assert "\r" not in text
    assert parse_counts(path) == table


# --- Pedigrees and datasets ---
def test_parse_pedigree(tmp_path):
    path = _write(tmp_path / "p.tsv", PEDIGREE_HEADER, [
        ("F1", "trio", "f,m,c", "", "", ""),
        ("F2", "relative_pair", "x,y", "0.5", "0.5", "0"),
        ("F3", "nuclear_family", "f,m,o1,o2", "", "", ""),
    ])
    rows = parse_pedigree(path)
    assert [r.relationship.tag for r in rows] == ["trio", "relative_pair", "nuclear_family"]
    assert rows[1].relationship.k == (0.5, 0.5, 0.0)
    assert rows[2].member_ids == ("f", "m", "o1", "o2")


@pytest.mark.parametrize("row, column", [
    (("F1", "trio", "f,m", "", "", ""), "member_ids"),
    (("F1", "half_sibs", "a,b", "", "", ""), "relationship"),
    (("F1", "relative_pair", "a,b", "0.5", "0.6", "0"), "relationship"),
])
def test_parse_pedigree_errors(tmp_path, row, column):
    path = _write(tmp_path / "p.tsv", PEDIGREE_HEADER, [row])
    with pytest.raises(PedCallFormatError) as excinfo:
        parse_pedigree(path)
    assert excinfo.value.column == column


def test_build_dataset_fills_missing_rows(tmp_path):
    counts = parse_counts(_write(tmp_path / "c.tsv", COUNTS_HEADER, [
        ("F1", "a", "rs1", 8, 4), ("F1", "b", "rs2", 6, 0), ("F1", "a", "rs2", 3, 3)]))
    pedigree = parse_pedigree(_write(tmp_path / "p.tsv", PEDIGREE_HEADER, [("F1", "sib_pair", "a,b", "", "", "")]))
    data = build_dataset(counts, pedigree)
    assert data.snp_ids == ("rs1", "rs2")
    family = data.families[0]
    assert family.depths.tolist() == [[8, 3], [0, 6]]
    assert family.variants.tolist() == [[4, 3], [0, 0]]
    only = build_dataset(counts, pedigree, ["rs2"])
    assert only.num_loci == 1
    with pytest.raises(PedCallValidationError):
        build_dataset(counts, pedigree, ["rs9"])


def test_build_dataset_rejects_stray_members(tmp_path):
    counts = parse_counts(_write(tmp_path / "c.tsv", COUNTS_HEADER, [("F1", "z", "rs1", 8, 4)]))
    pedigree = parse_pedigree(_write(tmp_path / "p.tsv", PEDIGREE_HEADER, [("F1", "singleton", "a", "", "", "")]))
    with pytest.raises(PedCallValidationError, match="missing from the pedigree"):
        build_dataset(counts, pedigree)


def test_pedigree_round_trip(tmp_path, make_scenario):
    data, _ = simulate_replication(make_scenario(relationship=Relationship.relative_pair(0.25, 0.5, 0.25),
                                                 families=3), 0)
    path = tmp_path / "ped.tsv"
    write_pedigree(path, data)
    rows = parse_pedigree(path)
    assert [r.family_id for r in rows] == ["F0001", "F0002", "F0003"]
    assert rows[0].relationship == data.families[0].relationship
    assert rows[0].member_ids == data.families[0].member_ids


# --- Calls and parameters ---
def test_emit_calls_format(tmp_path):
    marginals = np.array([[[0.98, 0.02, 0.0]], [[-1e-18, 0.1, 0.9]]])
    result = CallResult("F2", ("F2_sib2", "F2_sib1"), ("rs1",), np.array([[0], [2]], dtype=np.int8), 0.88,
                        marginals, False)
    other = CallResult("F1", ("F1_x",), ("rs1",), np.array([[1]], dtype=np.int8), 0.7,
                       np.array([[[0.2, 0.7, 0.1]]]), True)
    path = tmp_path / "calls.tsv"
    emit_calls(path, [result, other])
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "\t".join(CALLS_HEADER)
    assert lines[1] == "F1\tF1_x\trs1\t1\t0.200000\t0.700000\t0.100000\t1"
    assert lines[2] == "F2\tF2_sib1\trs1\t2\t0.000000\t0.100000\t0.900000\t0"
    assert lines[3] == "F2\tF2_sib2\trs1\t0\t0.980000\t0.020000\t0.000000\t0"


def test_params_round_trip(tmp_path):
    theta = ModelParams(FounderFrequencies(2, (0.6, 0.1, 0.05, 0.25)), ErrorRates((0.01, 0.03)))
    path = tmp_path / "params.tsv"
    write_params(path, theta, ("rs1", "rs2"), converged=False, haplotypes=True)
    params = read_params(path)
    assert params.snp_ids == ("rs1", "rs2")
    assert params.mafs == pytest.approx((0.3, 0.35))
    assert params.alphas == pytest.approx((0.01, 0.03))
    assert params.converged is False
    assert params.haplotypes.freqs == pytest.approx(theta.founders.freqs)
    assert params.model_params([1]).founders.freqs == pytest.approx((0.65, 0.35))


def test_params_round_trip_of_fitted_haplotypes(tmp_path, two_snp_scenario):
    data, _ = simulate_replication(two_snp_scenario, 0)
    result = fit(data, EmConfig(tol=1e-6, max_restarts=1))
    path = tmp_path / "params.tsv"
    write_params(path, result.theta_hat, data.snp_ids, converged=result.converged, haplotypes=True)
    theta = read_params(path).model_params()
    assert theta.founders.freqs == pytest.approx(result.theta_hat.founders.freqs, abs=1e-12)
    assert theta.errors.values == pytest.approx(result.theta_hat.errors.values, abs=1e-9)


def test_params_renormalize_rounded_haplotype_frequencies(tmp_path):
    path = tmp_path / "params.tsv"
    path.write_text("snp_id\tmaf_hat\talpha_hat\nrs1\t0.3\t0.01\nrs2\t0.35\t0.03\n#haplotypes\n"
                    "pattern\tfrequency\n00\t0.6000000000025\n01\t0.1000000000025\n"
                    "10\t0.0500000000025\n11\t0.2500000000025\n", encoding="utf-8")
    freqs = read_params(path).haplotypes.freqs
    assert sum(freqs) == pytest.approx(1.0, abs=1e-14)
    assert freqs == pytest.approx((0.6, 0.1, 0.05, 0.25), abs=1e-10)


def test_params_reject_haplotype_frequencies_far_from_one(tmp_path):
    path = tmp_path / "params.tsv"
    path.write_text("snp_id\tmaf_hat\talpha_hat\nrs1\t0.3\t0.01\n#haplotypes\npattern\tfrequency\n"
                    "0\t0.7\n1\t0.31\n", encoding="utf-8")
    with pytest.raises(PedCallFormatError, match="sum to"):
        read_params(path)


def test_params_without_haplotypes_use_independent_snps(tmp_path):
    path = tmp_path / "params.tsv"
    write_params(path, ModelParams(FounderFrequencies.independent([0.2, 0.4]), ErrorRates((0.01, 0.02))),
                 ("a", "b"))
    params = read_params(path)
    assert params.haplotypes is None
    assert params.converged is True
    assert params.model_params().founders.freqs == pytest.approx(FounderFrequencies.independent([0.2, 0.4]).freqs)


# --- Panels and scenarios ---
def test_read_panel(tmp_path):
    path = tmp_path / "panel.txt"
    path.write_text("#loci 3\n010\n111\n\n# comment\n000\n", encoding="utf-8")
    panel = read_panel(path)
    assert panel.haplotypes.tolist() == [[0, 1, 0], [1, 1, 1], [0, 0, 0]]
    path.write_text("#loci 3\n01\n", encoding="utf-8")
    with pytest.raises(PedCallFormatError) as excinfo:
        read_panel(path)
    assert excinfo.value.line == 2


def test_load_scenario(tmp_path):
    (tmp_path / "panel.txt").write_text("#loci 2\n01\n11\n00\n", encoding="utf-8")
    documents = {
        "two.json": {"relationship": "singleton", "families": 50,
                     "founders": {"model": "two_snp", "mafs": [0.2, 0.3], "r": 0.5},
                     "errors": {"model": "fixed", "alpha": [0.01, 0.02]}, "replications": 3, "seed": 7},
        "panel.json": {"relationship": {"kind": "relative_pair", "k": [0.25, 0.5, 0.25]}, "families": 10,
                       "founders": {"model": "panel", "path": "panel.txt", "loci": [1]},
                       "depth": {"model": "fixed", "depth": 20}},
        "fix.json": {"relationship": "trio", "families": 10, "founders": {"model": "fixation", "maf": 0.2, "F": 0.1},
                     "errors": {"model": "uniform", "low": 0.01, "high": 0.05}, "name": "inbred trios"},
    }
    for name, document in documents.items():
        (tmp_path / name).write_text(json.dumps(document), encoding="utf-8")
    two = load_scenario(tmp_path / "two.json")
    assert isinstance(two.founders, HaplotypeFounders)
    assert two.num_loci == 2 and two.replications == 3 and two.seed == 7
    assert two.errors.alpha == (0.01, 0.02)
    panel = load_scenario(tmp_path / "panel.json")
    assert isinstance(panel.founders, PanelFounders)
    assert panel.founders.panel.haplotypes[:, 0].tolist() == [1, 1, 0]
    assert panel.depth.depth == 20
    fixation = load_scenario(tmp_path / "fix.json")
    assert isinstance(fixation.founders, FixationFounders)
    assert fixation.label == "inbred trios"


def test_load_scenario_errors(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(PedCallFormatError):
        load_scenario(path)
    path.write_text(json.dumps({"relationship": "trio", "founders": {"model": "maf", "mafs": [0.1]}}), encoding="utf-8")
    with pytest.raises(PedCallValidationError, match="families"):
        load_scenario(path)
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "missing.json")


def test_bundled_scenarios_load():
    paths = sorted((Path(__file__).resolve().parent.parent / "scenarios").glob("*.json"))
    assert paths
    for path in paths:
        scenario = load_scenario(path)
        assert scenario.replications == 200


def test_bundled_ld_scenario_is_unrelated_high_ld_pair():
    path = Path(__file__).resolve().parent.parent / "scenarios" / "two_snp_ld.json"
    scenario = load_scenario(path)
    assert scenario.relationship == Relationship.singleton()
    assert scenario.families == 100
    assert scenario.depth.mean == 10
    assert tuple(scenario.errors.alpha) == pytest.approx((0.05, 0.05))
    assert scenario.founders.founders.mafs() == pytest.approx((0.01, 0.01))
