# cli.py — MIT License
# See LICENSE.txt for full terms.

import argparse
import dataclasses
import logging
import sys

from . import evaluation, reader, writer
from .genotype_model import (
    CallerConfig,
    EmConfig,
    ModelParams,
    PedCallError,
    PipelineConfig,
    call_dataset,
    call_dataset_haplotypes,
    fit,
    ld_pipeline,
)
from .simulator import simulate_replication

cli_logger = logging.getLogger("pedhapcall_cli")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _split_list(value):
    return [item.strip() for item in value.split(",") if item.strip()]


def _load_dataset(args, snp_ids=None):
    counts = reader.parse_counts(args.counts)
    pedigree = reader.parse_pedigree(args.ped)
    return reader.build_dataset(counts, pedigree, snp_ids)


def _em_config(args):
    return EmConfig(tol=args.tol, max_iter=args.max_iter, max_restarts=args.max_restarts, rng_seed=args.seed)


# --- Simulate ---
def handle_simulate(args):
    scenario = reader.load_scenario(args.config)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    data, truth = simulate_replication(scenario, args.replication)
    prefix = args.out_prefix
    writer.write_counts(f"{prefix}.counts.tsv", writer.counts_table(data), seed=scenario.seed)
    writer.write_pedigree(f"{prefix}.ped.tsv", data, seed=scenario.seed)
    writer.write_truth(f"{prefix}.truth.tsv", truth, seed=scenario.seed)
    cli_logger.info(f"Simulated replication {args.replication} of '{scenario.label}' "
                    f"({len(data)} families, {data.num_loci} SNPs) to '{prefix}.*.tsv'.")
    return EXIT_OK


# --- Fit ---
def handle_fit(args):
    data = _load_dataset(args, _split_list(args.loci) if args.loci else None)
    config = dataclasses.replace(_em_config(args), pooled_alpha=args.pooled_alpha,
                                 genotype_frequencies=args.genotype_frequencies)
    report = fit(data, config)
    writer.write_params(args.out, report.theta_hat, data.snp_ids, report.converged,
                        haplotypes=data.num_loci > 1, seed=args.seed)
    if report.degenerate_loci:
        cli_logger.warning(f"Error rates held at SNPs {[data.snp_ids[m] for m in report.degenerate_loci]}.")
    if not report.converged:
        cli_logger.warning(f"EM did not converge; parameters in '{args.out}' are from the last iteration.")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# --- Call ---
def handle_call(args):
    params = reader.read_params(args.params)
    data = _load_dataset(args, params.snp_ids)
    theta = params.model_params()
    if args.panel:
        panel = reader.read_panel(args.panel)
        loci = [int(m) for m in _split_list(args.panel_loci)] if args.panel_loci else None
        founders = panel.haplotype_frequencies(loci)
        if founders.num_loci != theta.num_loci:
            cli_logger.error(f"Panel covers {founders.num_loci} loci; parameters cover {theta.num_loci}.")
            return EXIT_ERROR
        theta = ModelParams(founders, theta.errors)
        cli_logger.info(f"Haplotype frequencies taken from {len(panel)} panel haplotypes.")
    config = CallerConfig()
    if args.haplotypes:
        results = call_dataset_haplotypes(data, theta, config)
    else:
        results = call_dataset(data, theta, config)
    writer.emit_calls(args.out, results)
    if params.converged is False:
        cli_logger.warning(f"Parameters in '{args.params}' come from a fit that did not converge.")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# --- LD pipeline ---
def handle_ld_pipeline(args):
    data = _load_dataset(args)
    config = PipelineConfig(min_r2=args.min_r2, penalty=args.penalty, em=_em_config(args))
    result = ld_pipeline(data, config)
    writer.emit_calls(args.out, [res for calls in result.calls for res in calls], seed=args.seed)
    for m, selection in enumerate(result.partners):
        if selection is not None:
            cli_logger.info(f"{data.snp_ids[m]}: partner {data.snp_ids[selection.partner]} "
                            f"(r={selection.r:.3f}, alpha={selection.partner_alpha:.4f})")
    if not result.converged:
        cli_logger.warning("At least one EM fit did not converge.")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# --- Evaluate ---
def _evaluation_config(args, methods):
    em = EmConfig(tol=args.tol, max_restarts=args.max_restarts)
    return evaluation.EvaluationConfig(methods=tuple(methods), em=em, known_theta=args.known_theta,
                                       cross_check=getattr(args, "cross_check", False), threads=args.threads)


def _report_rows(args, rows, seed):
    print(evaluation.format_table(rows))
    if args.out:
        writer.write_comparison_tsv(args.out, rows, seed=seed)
    if any(count for row in rows for count in row.nonconverged.values()):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def handle_evaluate(args):
    scenario = reader.load_scenario(args.scenario)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.reps is not None:
        overrides["replications"] = args.reps
    scenario = dataclasses.replace(scenario, **overrides)
    row = evaluation.run_comparison(scenario, _evaluation_config(args, _split_list(args.methods)))
    return _report_rows(args, [row], scenario.seed)


def handle_read_budget(args):
    config = _evaluation_config(args, ["pedgc"])
    rows = evaluation.read_budget_experiment(maf=args.maf, alpha=args.alpha, families=args.families,
                                             depth_sibs=args.depth_sibs, depth_family=args.depth_family,
                                             replications=args.reps, seed=args.seed, config=config)
    return _report_rows(args, list(rows), args.seed)


# --- Parser ---
def _add_em_options(parser):
    parser.add_argument("--tol", type=float, default=1e-8, help="EM relative-change tolerance (default: 1e-8).")
    parser.add_argument("--max-iter", type=int, default=5000, help="EM iteration limit (default: 5000).")
    parser.add_argument("--max-restarts", type=int, default=5, help="Random restarts after a boundary fit (default: 5).")
    parser.add_argument("--seed", type=int, default=0, help="Seed for random restarts (default: 0).")


def build_parser():
    parser = _ArgumentParser(
        prog="pedhapcall",
        description="Genotype and haplotype calling from sequence read counts of related individuals.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument("--debug", action="store_true", help="Enable debug logging with detailed tracebacks.")
    parser.add_argument("--threads", type=int, default=None,
                        help="Worker processes for replicated experiments (default: all CPUs).")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser,
                                       help="Available commands. Use <command> --help for more details.")

    p = subparsers.add_parser("simulate", help="Simulate one replication of a scenario to TSV files.")
    p.add_argument("--config", required=True, help="Scenario JSON file.")
    p.add_argument("--seed", type=int, default=None, help="Override the scenario seed.")
    p.add_argument("--replication", type=int, default=0, help="Replication index to simulate (default: 0).")
    p.add_argument("--out-prefix", required=True, help="Prefix for <prefix>.counts.tsv, .ped.tsv and .truth.tsv.")
    p.set_defaults(func=handle_simulate)

    p = subparsers.add_parser("fit", help="Estimate haplotype frequencies and read error rates by EM.")
    p.add_argument("--counts", required=True, help="Read counts TSV.")
    p.add_argument("--ped", required=True, help="Pedigree TSV.")
    p.add_argument("--loci", help="Comma-separated SNP ids to fit jointly (default: all SNPs).")
    _add_em_options(p)
    p.add_argument("--pooled-alpha", action="store_true", help="Fit one error rate shared by all SNPs.")
    p.add_argument("--genotype-frequencies", action="store_true",
                   help="Fit free founder genotype frequencies (single SNP, pedigrees with founders).")
    p.add_argument("--out", required=True, help="Output params TSV.")
    p.set_defaults(func=handle_fit)

    p = subparsers.add_parser("call", help="Call genotypes as the posterior mode under fitted parameters.")
    p.add_argument("--counts", required=True, help="Read counts TSV.")
    p.add_argument("--ped", required=True, help="Pedigree TSV.")
    p.add_argument("--params", required=True, help="Params TSV from 'fit'.")
    p.add_argument("--panel", help="Reference panel whose haplotype frequencies replace the fitted ones.")
    p.add_argument("--panel-loci", help="Comma-separated panel column indices matching the params SNPs.")
    p.add_argument("--haplotypes", action="store_true", help="Call diploid haplotypes jointly (2-3 SNPs).")
    p.add_argument("--out", required=True, help="Output calls TSV.")
    p.set_defaults(func=handle_call)

    p = subparsers.add_parser("ld-pipeline", help="Call every SNP of a region using a partner SNP in LD.")
    p.add_argument("--counts", required=True, help="Read counts TSV.")
    p.add_argument("--ped", required=True, help="Pedigree TSV.")
    p.add_argument("--min-r2", type=float, default=0.5, help="Minimum r^2 for a partner SNP (default: 0.5).")
    p.add_argument("--lambda", dest="penalty", type=float, default=1.0,
                   help="Weight of the partner error rate in the partner score (default: 1.0).")
    _add_em_options(p)
    p.add_argument("--out", required=True, help="Output calls TSV.")
    p.set_defaults(func=handle_ld_pipeline)

    p = subparsers.add_parser("evaluate", help="Compare calling methods on a replicated scenario.")
    p.add_argument("--scenario", required=True, help="Scenario JSON file.")
    p.add_argument("--methods", default="pedgc,seqem", help="Comma-separated: pedgc, seqem, hapgc, pedhapgc.")
    p.add_argument("--reps", type=int, default=None, help="Override the replication count.")
    p.add_argument("--seed", type=int, default=None, help="Override the scenario seed.")
    p.add_argument("--tol", type=float, default=1e-6, help="EM tolerance for each fit (default: 1e-6).")
    p.add_argument("--max-restarts", type=int, default=2, help="Random restarts per fit (default: 2).")
    p.add_argument("--known-theta", action="store_true", help="Call with the simulating parameters.")
    p.add_argument("--cross-check", action="store_true",
                   help="Warn when a seqem fit disagrees with the standalone single-SNP EM.")
    p.add_argument("--out", help="Output comparison TSV.")
    p.set_defaults(func=handle_evaluate)

    p = subparsers.add_parser("read-budget", help="Sib pairs alone versus sib pairs with parents at equal reads.")
    p.add_argument("--maf", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--families", type=int, default=50)
    p.add_argument("--depth-sibs", type=float, default=10.0, help="Mean depth in the sibs-only arm.")
    p.add_argument("--depth-family", type=float, default=5.0, help="Mean depth in the sibs-and-parents arm.")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6, help="EM tolerance for each fit (default: 1e-6).")
    p.add_argument("--max-restarts", type=int, default=2, help="Random restarts per fit (default: 2).")
    p.add_argument("--known-theta", action="store_true")
    p.add_argument("--out", help="Output comparison TSV.")
    p.set_defaults(func=handle_read_budget)
    return parser


def cli(argv=None):
    """Runs one command and returns its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_ERROR

    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)
        for handler in logging.getLogger().handlers:
            handler.setLevel(logging.DEBUG)
        cli_logger.info("Debug mode enabled with detailed tracebacks.")

    try:
        return args.func(args)
    except FileNotFoundError as e:
        cli_logger.error(f"Error: file '{e.filename}' not found.")
    except PedCallError as e:
        cli_logger.error(f"Error: {e}", exc_info=args.debug)
    except OSError as e:
        cli_logger.error(f"Error: {e}", exc_info=args.debug)
    except Exception as e:
        cli_logger.error(f"Unexpected error in '{args.command}': {e}", exc_info=args.debug)
    return EXIT_ERROR


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
