"""Command line entry point: ``rdslab <command> ...``.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import ESTIMATORS, InsufficientDataError, estimate
from .fomtest import network_fom_test, sample_fom_test
from .graph import (
    GraphFormatError,
    estimate_node_independent_paths,
    largest_connected_component,
    load_edge_list,
    stationary_distribution,
    transition_matrix,
    write_attributes,
    write_edge_list,
)
from .harness import ExperimentConfig, run_experiment, write_report
from .sampler import RdsConfig, SamplingExhaustedError, random_walk_sample, rds_sample, read_forest, write_forest
from .spectral import (
    CategoryChain,
    NonReversibleChainError,
    chain_variance,
    decompose,
    exact_rws_variance,
    projection,
)
from .synth import (
    BlockModelSpec,
    InfeasibleSpecError,
    ReducibleChainError,
    build_category_chain,
    generate_block_network,
    make_contrast_pair,
    population_category_chain,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _clean_nan(obj):
    if isinstance(obj, dict):
        return {k: _clean_nan(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean_nan(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _load_graph(args):
    g = load_edge_list(args.edges, args.delimiter, args.directed, args.attributes)
    return largest_connected_component(g)


def _add_graph_args(p, required=True):
    p.add_argument("--edges", required=required, help="edge list file, two node tokens per line")
    p.add_argument("--attributes", help="CSV with header 'node,<attr>,...' holding 0/1 values")
    p.add_argument("--delimiter", default=None, help="field separator (default: whitespace)")
    p.add_argument("--directed", action="store_true", help="input lists directed ties; symmetrize")


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    if args.kind == "block":
        spec = BlockModelSpec.from_efh(args.E, args.F, args.H, args.cell_size)
        g = generate_block_network(spec, rng)
        out.mkdir(parents=True, exist_ok=True)
        write_edge_list(g, out / "edges.txt")
        write_attributes(g, out / "attributes.csv")
        summary = {"nodes": g.n_nodes, "edges": g.n_edges, "a": spec.a, "b": spec.b, "tie_table": spec.tie_table.tolist()}
    else:
        fom, non = make_contrast_pair(args.cell_size, args.degree, args.bridge_ties, args.cross_ties, rng)
        summary = {}
        for name, g in (("fom", fom), ("nonfom", non)):
            d = out / name
            d.mkdir(parents=True, exist_ok=True)
            write_edge_list(g, d / "edges.txt")
            write_attributes(g, d / "attributes.csv")
            summary[name] = {"nodes": g.n_nodes, "edges": g.n_edges}
    _emit(summary, None)
    return EXIT_OK


def cmd_sample(args) -> int:
    g = _load_graph(args)
    rng = np.random.default_rng(args.seed)
    if args.walk:
        forest = random_walk_sample(g, args.size, rng, seed_mode=args.seed_mode)
    else:
        branching = tuple(args.branching) if args.branching else RdsConfig().branching
        cfg = RdsConfig(args.size, branching, not args.without_replacement, args.seed_mode, args.seeds)
        forest = rds_sample(g, cfg, rng)
    write_forest(forest, args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    forest = read_forest(args.forest)
    if args.attribute not in forest.values:
        raise GraphFormatError(f"attribute {args.attribute!r} not in forest file")
    names = ESTIMATORS if args.estimator == "all" else (args.estimator,)
    rng = np.random.default_rng(args.seed)
    result = {name: estimate(forest, args.attribute, name, args.bootstrap, rng).as_dict(args.z) for name in names}
    _emit(_clean_nan(result), args.out)
    return EXIT_OK


def cmd_fomtest(args) -> int:
    if args.level == "network":
        if not args.edges:
            raise UsageError("--level network needs --edges")
        res = network_fom_test(_load_graph(args), args.attribute, args.alpha)
    else:
        if not args.forest:
            raise UsageError("--level sample needs --forest")
        res = sample_fom_test(read_forest(args.forest), args.attribute, args.alpha)
    _emit(_clean_nan(res.as_dict()), args.out)
    return EXIT_OK


def _describe(chain: CategoryChain, S: int) -> dict:
    d = decompose(chain)
    ex = chain_variance(chain, None, S)
    return {
        "eigenvalues": d.eigenvalues.tolist(),
        "lambda2": d.second_largest,
        "variance": ex.variance,
        "sd": ex.sd,
        "design_effect": ex.design_effect,
    }


def cmd_exact(args) -> int:
    if args.matrix:
        P = np.array(json.loads(Path(args.matrix).read_text()) if Path(args.matrix).exists() else json.loads(args.matrix))
        values = args.values if args.values else list(range(P.shape[0]))
        if len(values) != P.shape[0]:
            raise UsageError("--values must give one value per state")
        _emit({"chain": _describe(CategoryChain.from_matrix(P, values), args.size)}, None)
        return EXIT_OK
    if args.edges:
        if not args.attribute:
            raise UsageError("--edges needs --attribute")
        g = _load_graph(args)
        y = g.attribute(args.attribute)
        if np.isnan(y).any():
            raise GraphFormatError(f"attribute {args.attribute!r} has missing values")
        node_walk = decompose(transition_matrix(g), stationary_distribution(g))
        ex = exact_rws_variance(projection(node_walk, y), node_walk, args.size)
        result = {
            "nodes": g.n_nodes,
            "walk": {"lambda2": node_walk.second_largest, "variance": ex.variance, "sd": ex.sd, "design_effect": ex.design_effect},
            "category_chain": _describe(population_category_chain(g, args.attribute), args.size),
        }
        _emit(result, None)
        return EXIT_OK
    if args.E is None or args.F is None or args.H is None:
        raise UsageError("give --E --F --H, --matrix or --edges")
    spec = BlockModelSpec.from_efh(args.E, args.F, args.H)
    M, C = build_category_chain(spec)
    _emit({"a": spec.a, "b": spec.b, "M": _describe(M, args.size), "C": _describe(C, args.size)}, None)
    return EXIT_OK


def cmd_cohesion(args) -> int:
    g = _load_graph(args)
    est = estimate_node_independent_paths(g, args.dyads, np.random.default_rng(args.seed))
    _emit(
        {
            "mean": est.mean,
            "min": est.minimum,
            "max": est.maximum,
            "dyads": est.n_dyads,
            "exhaustive": est.exhaustive,
            "standard_error": est.standard_error,
        },
        None,
    )
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.parallelism is not None:
        from dataclasses import replace

        cfg = replace(cfg, parallelism=args.parallelism)
    report = run_experiment(cfg)
    write_report(report, args.out)
    if report.failures:
        for net, msg in report.failures.items():
            logging.getLogger("rdslab").error("%s: %s", net, msg)
    return EXIT_OK if report.summaries else EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdslab", description="RDS variance diagnostics on networks and samples")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a block-model network or a FOM contrast pair")
    p.add_argument("kind", choices=("block", "contrast"))
    p.add_argument("--E", type=int, default=240)
    p.add_argument("--F", type=int, default=240)
    p.add_argument("--H", type=int, default=240)
    p.add_argument("--cell-size", type=int, default=50)
    p.add_argument("--degree", type=int, default=9)
    p.add_argument("--bridge-ties", type=int, default=1)
    p.add_argument("--cross-ties", type=int, default=6)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="draw an RDS sample or a random walk")
    _add_graph_args(p)
    p.add_argument("--size", type=int, default=200)
    p.add_argument("--branching", type=float, nargs="+", help="P(0), P(1), ... recruits per respondent")
    p.add_argument("--walk", action="store_true", help="single-chain random walk")
    p.add_argument("--without-replacement", action="store_true")
    p.add_argument("--seed-mode", choices=("equilibrium", "uniform"), default="equilibrium")
    p.add_argument("--seeds", type=int, default=1, help="number of initial seeds")
    p.add_argument("--seed", type=int, default=None, help="RNG seed")
    p.add_argument("--out", required=True, help="forest CSV")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("estimate", help="mean and variance estimates for a forest")
    p.add_argument("--forest", required=True)
    p.add_argument("--attribute", required=True)
    p.add_argument("--estimator", choices=(*ESTIMATORS, "all"), default="all")
    p.add_argument("--bootstrap", type=int, default=1000, help="bootstrap replicates for sbe")
    p.add_argument("--z", type=float, default=1.96)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="JSON output file (default stdout)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("fomtest", help="two-step Markov dependence test")
    p.add_argument("--level", choices=("network", "sample"), required=True)
    _add_graph_args(p, required=False)
    p.add_argument("--forest")
    p.add_argument("--attribute", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fomtest)

    p = sub.add_parser("exact", help="exact walk variance for a block model, a chain or a network")
    _add_graph_args(p, required=False)
    p.add_argument("--attribute", help="attribute for --edges")
    p.add_argument("--E", type=int)
    p.add_argument("--F", type=int)
    p.add_argument("--H", type=int)
    p.add_argument("--matrix", help="JSON transition matrix (inline or file)")
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--size", type=int, default=100, help="sample size S")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("cohesion", help="mean node-independent paths over sampled dyads")
    _add_graph_args(p)
    p.add_argument("--dyads", type=int, default=10000)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_cohesion)

    p = sub.add_parser("experiment", help="replicated sampling experiment from a JSON/YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--parallelism", type=int, default=None)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    log = logging.getLogger("rdslab")
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (NonReversibleChainError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (
        OSError,
        GraphFormatError,
        InfeasibleSpecError,
        ReducibleChainError,
        InsufficientDataError,
        SamplingExhaustedError,
        KeyError,
        ValueError,
    ) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
