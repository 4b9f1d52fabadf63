"""
Command-line surface.

    normrecon sample-target --dim 8 --depth 2 --seed 0 --out g.json
    normrecon construct-wide --target g.json --seed 1 --out f.json --report report.json
    normrecon verify --network f.json --target g.json --samples 1000
    normrecon sweep --config experiment.json --out results.csv --figures figures/

Exit codes: 0 success, 2 construction failure, 3 verification failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from normrecon.constants import (
    DEEP_REDRAWS,
    DEFAULT_CBAR,
    DEFAULT_SAMPLES,
    DEFAULT_WORKERS,
    EQUIVALENCE_TOLERANCE,
    LINEARIZATION_MARGIN,
    MAX_RESAMPLES,
)
from normrecon.errors import ReconstructionError
from normrecon.helpers import configure_logging
from normrecon.models.network import TargetNetwork
from normrecon.models.payload import ConstructionResult
from normrecon.models.report import ExperimentConfig, ReconstructionReport
from normrecon.models.tensor import Distribution
from normrecon.services import deep, experiment, netmodel, sparse, tensor_core, verify, wide
from normrecon.services.serialization import load_network, network_payload, save_model, save_network

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONSTRUCTION_FAILED = 2
EXIT_VERIFICATION_FAILED = 3


def _print_json(document: str):
    sys.stdout.write(document + "\n")


def _load_target(path: str) -> TargetNetwork:
    target = load_network(path)
    if not isinstance(target, TargetNetwork):
        raise ReconstructionError(f"{path} does not hold a target network")
    return target


def _emit_construction(args, network, report: ReconstructionReport) -> int:
    if args.out:
        save_network(network, args.out, args.seed)
    if args.report:
        save_model(report, args.report)
    if not args.out and not args.report:
        _print_json(ConstructionResult(network=network_payload(network, args.seed), report=report).model_dump_json())
    elif not args.report:
        _print_json(report.model_dump_json(indent=2))

    equivalence = report.equivalence
    if equivalence is not None and not equivalence.within(args.tolerance):
        logger.error(
            f"Equivalence check failed: max error {equivalence.max_abs_error:.3e} > {args.tolerance:.1e}"
        )
        return EXIT_VERIFICATION_FAILED
    return EXIT_OK


def cmd_sample_target(args) -> int:
    if args.rank is not None:
        g = netmodel.sample_lowrank_target(args.dim, args.depth, args.rank, args.seed)
    else:
        g = netmodel.sample_target(args.dim, args.depth, args.seed, Distribution(args.distribution))
    if args.out:
        save_network(g, args.out, args.seed)
    else:
        _print_json(network_payload(g, args.seed).model_dump_json())
    return EXIT_OK


def cmd_construct_wide(args) -> int:
    g = _load_target(args.target)
    stack, report = wide.construct_wide(
        g,
        args.seed,
        args.radius,
        args.margin,
        allow_pseudo_inverse=args.pinv,
        workers=args.workers,
        verify_samples=args.verify,
    )
    return _emit_construction(args, stack, report)


def cmd_construct_lowrank(args) -> int:
    g = _load_target(args.target)
    stack, report = wide.construct_lowrank(
        g, args.rank, args.seed, args.radius, args.margin, workers=args.workers, verify_samples=args.verify
    )
    return _emit_construction(args, stack, report)


def cmd_construct_deep(args) -> int:
    g = _load_target(args.target)
    stack, report = deep.construct_deep(
        g,
        args.chunk,
        args.seed,
        args.radius,
        args.margin,
        max_resamples=args.max_resamples,
        max_redraws=args.max_redraws,
        verify_samples=args.verify,
    )
    return _emit_construction(args, stack, report)


def cmd_construct_sparse(args) -> int:
    g = _load_target(args.target)
    p = args.sparsity
    if p is None:
        p = sparse.choose_sparsity(max(layer.in_dim for layer in g.layers), args.cbar)
        logger.info(f"[SPARSE] Using p={p:.4f} from cbar={args.cbar}")
    stack, report = sparse.construct_sparse(
        g,
        p,
        args.seed,
        args.radius,
        args.margin,
        workers=args.workers,
        verify_samples=args.verify,
        layer_failure_rate=args.layer_rate,
    )
    return _emit_construction(args, stack, report)


def cmd_verify(args) -> int:
    result = verify.verify_equivalence(
        load_network(args.network), _load_target(args.target), args.samples, args.seed, args.radius
    )
    if args.report:
        save_model(result, args.report)
    _print_json(result.model_dump_json(indent=2))
    return EXIT_OK if result.within(args.tolerance) else EXIT_VERIFICATION_FAILED


def cmd_singularity_rate(args) -> int:
    estimate = sparse.estimate_singularity_rate(args.dim, args.sparsity, args.trials, args.seed, args.workers)
    _print_json(json.dumps(estimate.as_dict(), indent=2))
    return EXIT_OK


def cmd_kr_probe(args) -> int:
    full = tensor_core.full_rank_rate(args.n, args.m, args.trials, Distribution(args.distribution), args.seed)
    _print_json(
        json.dumps(
            {
                "n": args.n,
                "m": args.m,
                "distribution": args.distribution,
                "trials": args.trials,
                "full_rank": full,
                "rate": full / args.trials,
            },
            indent=2,
        )
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig()
    if args.config:
        cfg = ExperimentConfig.model_validate_json(Path(args.config).read_text())
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seeds": [args.seed]})
    rows = experiment.run_experiment(cfg)
    out = args.out or "results.csv"
    experiment.emit_results(rows, out, args.figures)
    if args.report:
        summary = experiment.trimmed_summary(rows)
        Path(args.report).write_text(
            json.dumps([s.model_dump(mode="json") for s in summary], indent=2, allow_nan=True)
        )
    failed = sum(row.failed for row in rows)
    if failed:
        logger.warning(f"[SWEEP] {failed} of {len(rows)} cells failed")
    return EXIT_OK


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Integer seed (omit for fresh entropy)")
    common.add_argument("--out", default=None, help="Output file (network JSON, or CSV for sweep)")
    common.add_argument("--report", default=None, help="Write the JSON report here")
    common.add_argument("--config", default=None, help="ExperimentConfig JSON file (sweep)")
    common.add_argument("--log-level", default=None, help="Logging level (default from NORMRECON_LOG_LEVEL)")
    return common


def _construction_options() -> argparse.ArgumentParser:
    options = argparse.ArgumentParser(add_help=False)
    options.add_argument("--target", required=True, help="Target network JSON")
    options.add_argument("--radius", type=float, default=1.0, help="Input ball radius of exactness")
    options.add_argument("--margin", type=float, default=LINEARIZATION_MARGIN)
    options.add_argument("--verify", type=int, default=0, metavar="SAMPLES", help="Check equivalence on SAMPLES inputs")
    options.add_argument("--tolerance", type=float, default=EQUIVALENCE_TOLERANCE)
    options.add_argument("--workers", type=int, default=DEFAULT_WORKERS)
    return options


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    construction = _construction_options()
    parser = argparse.ArgumentParser(
        prog="normrecon",
        description="Reconstruct ReLU networks by solving the normalization parameters of frozen random networks",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("sample-target", parents=[common], help="Sample a random target network")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--rank", type=int, default=None, help="Sample rank-limited weights instead")
    p.add_argument("--distribution", choices=[d.value for d in Distribution], default=Distribution.UNIFORM.value)
    p.set_defaults(handler=cmd_sample_target)

    p = commands.add_parser("construct-wide", parents=[common, construction], help="Wide pair construction")
    p.add_argument("--pinv", action="store_true", help="Accept pseudo-inverse solutions of singular systems")
    p.set_defaults(handler=cmd_construct_wide)

    p = commands.add_parser("construct-lowrank", parents=[common, construction], help="Low-rank pair construction")
    p.add_argument("--rank", type=int, required=True)
    p.set_defaults(handler=cmd_construct_lowrank)

    p = commands.add_parser("construct-deep", parents=[common, construction], help="Skip-connected block construction")
    p.add_argument("--chunk", type=int, required=True)
    p.add_argument("--max-resamples", type=int, default=MAX_RESAMPLES)
    p.add_argument("--max-redraws", type=int, default=DEEP_REDRAWS, help="Per-layer redraws of poorly conditioned blocks")
    p.set_defaults(handler=cmd_construct_deep)

    p = commands.add_parser("construct-sparse", parents=[common, construction], help="Sparse frozen weights")
    p.add_argument("--sparsity", type=float, default=None, help="Keep probability p (default from --cbar)")
    p.add_argument("--cbar", type=float, default=DEFAULT_CBAR)
    p.add_argument("--layer-rate", type=float, default=None, help="Per-pair singularity rate for the union bound")
    p.set_defaults(handler=cmd_construct_sparse)

    p = commands.add_parser("verify", parents=[common], help="Check functional equivalence")
    p.add_argument("--network", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--tolerance", type=float, default=EQUIVALENCE_TOLERANCE)
    p.set_defaults(handler=cmd_verify)

    p = commands.add_parser("singularity-rate", parents=[common], help="Sparse Khatri-Rao singularity rate")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--workers", type=int, default=DEFAULT_WORKERS)
    p.set_defaults(handler=cmd_singularity_rate)

    p = commands.add_parser("kr-probe", parents=[common], help="Khatri-Rao full-rank frequency")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--distribution", choices=[d.value for d in Distribution], default=Distribution.UNIFORM.value)
    p.set_defaults(handler=cmd_kr_probe)

    p = commands.add_parser("sweep", parents=[common], help="Run the SGD vs construction experiment")
    p.add_argument("--figures", default=None, help="Directory for gnuplot data files")
    p.set_defaults(handler=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except ReconstructionError as e:
        report = getattr(e, "report", None)
        if report is not None and args.report:
            save_model(report, args.report)
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONSTRUCTION_FAILED


if __name__ == "__main__":
    sys.exit(main())
