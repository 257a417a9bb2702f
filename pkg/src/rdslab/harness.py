"""Replicated RDS experiments: sampling, estimation, FOM tests and report metrics."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .estimators import ESTIMATORS, InsufficientDataError, estimate, vh_mean, vhe_known_chain_variance
from .fomtest import INCONCLUSIVE, MAY_BE_FOM, NOT_FOM, sample_fom_test
from .graph import Graph, largest_connected_component, load_edge_list
from .sampler import RdsConfig, rds_sample
from .synth import (
    BlockModelSpec,
    ReducibleChainError,
    generate_block_network,
    make_contrast_pair,
    population_category_chain,
)

logger = logging.getLogger(__name__)

# VHE evaluated with the network's own Y chain instead of a fitted one
POPULATION_VHE = "vhepop"
HARNESS_ESTIMATORS = (*ESTIMATORS, POPULATION_VHE)


# -- metrics -----------------------------------------------------------------


def population_sampling_variance(estimates: Sequence[float], mu: float) -> float:
    """Mean squared deviation of replicate mean estimates about the true mean."""
    est = np.asarray(estimates, dtype=float)
    if len(est) < 2:
        raise ValueError("need at least two replications")
    return float(np.mean((est - mu) ** 2))


def estimator_bias(variances: Sequence[float], population_variance: float) -> float:
    return float(np.mean(variances) - population_variance)


def estimator_ratio(variances: Sequence[float], population_variance: float) -> float:
    if population_variance == 0:
        return float("nan")
    return float(np.mean(variances) / population_variance)


@dataclass(frozen=True)
class BiasRatioCorrelation:
    bias: tuple[float, ...]
    ratio: tuple[float, ...]
    correlation: float | None


def bias_ratio_correlation(per_network: Sequence[tuple[Sequence[float], float]]) -> BiasRatioCorrelation:
    """Per-network bias and ratio, plus the across-network correlation of
    mean estimated variance with population variance (needs >= 3 networks)."""
    bias = tuple(estimator_bias(v, p) for v, p in per_network)
    ratio = tuple(estimator_ratio(v, p) for v, p in per_network)
    corr = None
    if len(per_network) >= 3:
        means = np.array([np.mean(v) for v, _ in per_network])
        pops = np.array([p for _, p in per_network])
        if means.std() > 0 and pops.std() > 0:
            corr = float(np.corrcoef(means, pops)[0, 1])
    return BiasRatioCorrelation(bias, ratio, corr)


def coverage_rate(mu_hats: Sequence[float], variances: Sequence[float], mu: float, z: float = 1.96) -> float:
    """Share of replications with ``|mu_hat - mu| <= z * sqrt(var)``.

    Replications whose variance is NaN count as not covered.
    """
    m = np.asarray(mu_hats, dtype=float)
    v = np.asarray(variances, dtype=float)
    if len(m) < 1:
        raise ValueError("need at least one replication")
    with np.errstate(invalid="ignore"):
        hit = np.abs(m - mu) <= z * np.sqrt(v)
    return float(np.mean(hit & np.isfinite(v)))


def derive_seed(master_seed: int, *parts: Any) -> int:
    """Stable 64-bit seed from the master seed and identifying parts."""
    text = "|".join([str(master_seed), *map(str, parts)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class NetworkSource:
    """A network read from files or generated from a synthetic spec.

    ``synth`` holds e.g. ``{"kind": "block", "E": 240, "F": 240, "H": 240,
    "cell_size": 50}`` or ``{"kind": "contrast", "member": "nonfom"}``.
    """

    id: str
    edges: str | None = None
    attributes: str | None = None
    directed: bool = False
    delimiter: str | None = None
    synth: Mapping[str, Any] | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    networks: tuple[NetworkSource, ...]
    attributes: tuple[str, ...]
    replications: int = 500
    rds: RdsConfig = field(default_factory=RdsConfig)
    estimators: tuple[str, ...] = ESTIMATORS
    bootstrap: int = 1000
    z: float = 1.96
    alphas: tuple[float, ...] = (0.05, 0.01, 0.001)
    master_seed: int = 0
    parallelism: int = 1

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("replications must be >= 2")
        if not self.networks:
            raise ValueError("no networks configured")
        if not self.attributes:
            raise ValueError("no attributes configured")
        for name in self.estimators:
            if name not in HARNESS_ESTIMATORS:
                raise ValueError(f"unknown estimator {name!r}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if len({n.id for n in self.networks}) != len(self.networks):
            raise ValueError("network ids must be unique")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], base_dir: str | Path = ".") -> "ExperimentConfig":
        base = Path(base_dir)
        nets = []
        for item in doc.get("networks", []):
            item = dict(item)
            for key in ("edges", "attributes"):
                if item.get(key) is not None:
                    item[key] = str(base / item[key])
            nets.append(NetworkSource(**item))
        rds = RdsConfig(**{k: tuple(v) if k == "branching" else v for k, v in doc.get("rds", {}).items()})
        kw = {k: doc[k] for k in ("replications", "bootstrap", "z", "master_seed", "parallelism") if k in doc}
        for k in ("estimators", "alphas"):
            if k in doc:
                kw[k] = tuple(doc[k])
        return cls(tuple(nets), tuple(doc.get("attributes", ())), rds=rds, **kw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix.lower() in (".yaml", ".yml"):
            import yaml

            doc = yaml.safe_load(text)
        else:
            doc = json.loads(text)
        return cls.from_dict(doc or {}, path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["networks"] = [asdict(n) for n in self.networks]
        return d


def load_network(src: NetworkSource, master_seed: int) -> Graph:
    if src.synth is not None:
        spec = dict(src.synth)
        kind = spec.pop("kind", "block")
        # contrast members sharing a "pair" key come from the same draw
        key = spec.pop("pair", src.id) if kind == "contrast" else src.id
        rng = np.random.default_rng(derive_seed(master_seed, "synth", key))
        if kind == "block":
            g = generate_block_network(BlockModelSpec.from_efh(**spec), rng)
        elif kind == "contrast":
            member = spec.pop("member", "nonfom")
            fom, non = make_contrast_pair(rng=rng, **spec)
            g = fom if member == "fom" else non
        else:
            raise ValueError(f"unknown synthetic network kind {kind!r}")
    elif src.edges is not None:
        g = load_edge_list(src.edges, src.delimiter, src.directed, src.attributes)
    else:
        raise ValueError(f"network {src.id!r} has neither edges nor synth spec")
    return largest_connected_component(g)


# -- replication -------------------------------------------------------------


@dataclass(frozen=True)
class Replication:
    index: int
    mu_hat: float
    variances: dict[str, float]
    fom_p: float
    fom_verdict: str


def _replicate(g: Graph, attribute: str, cfg: ExperimentConfig, net_id: str, r: int, chain=None) -> Replication:
    seed = derive_seed(cfg.master_seed, net_id, attribute, r)
    rng = np.random.default_rng(seed)
    forest = rds_sample(g, cfg.rds, rng)
    mu_hat = vh_mean(forest, attribute)
    variances = {}
    for name in cfg.estimators:
        est_rng = np.random.default_rng(derive_seed(seed, name))
        try:
            if name == POPULATION_VHE:
                if chain is None:
                    raise InsufficientDataError("network has no usable Y chain")
                variances[name] = vhe_known_chain_variance(forest, attribute, chain).variance
            else:
                variances[name] = estimate(forest, attribute, name, cfg.bootstrap, est_rng).variance
        except InsufficientDataError as exc:
            logger.debug("%s/%s rep %d: %s failed: %s", net_id, attribute, r, name, exc)
            variances[name] = float("nan")
    fom = sample_fom_test(forest, attribute, max(cfg.alphas))
    return Replication(r, mu_hat, variances, fom.p_value, fom.verdict)


def _replicate_chunk(args) -> list[Replication]:
    g, attribute, cfg, net_id, rs, chain = args
    return [_replicate(g, attribute, cfg, net_id, r, chain) for r in rs]


def _run_replications(g: Graph, attribute: str, cfg: ExperimentConfig, net_id: str) -> list[Replication]:
    R = cfg.replications
    chain = None
    if POPULATION_VHE in cfg.estimators:
        try:
            chain = population_category_chain(g, attribute)
        except ReducibleChainError as exc:
            logger.warning("%s/%s: %s", net_id, attribute, exc)
    if cfg.parallelism == 1:
        return _replicate_chunk((g, attribute, cfg, net_id, range(R), chain))
    chunks = [range(i, R, cfg.parallelism) for i in range(cfg.parallelism)]
    with ProcessPoolExecutor(cfg.parallelism) as pool:
        parts = pool.map(_replicate_chunk, [(g, attribute, cfg, net_id, c, chain) for c in chunks])
        reps = [rep for part in parts for rep in part]
    return sorted(reps, key=lambda rep: rep.index)


# -- report ------------------------------------------------------------------


@dataclass
class EstimatorSummary:
    estimator: str
    mean_variance: float
    bias: float
    ratio: float
    coverage: float
    mean_estimated_de: float
    failures: int


@dataclass
class StratumSummary:
    verdict: str
    count: int
    mean_empirical_de: float
    mean_estimated_de: dict[str, float]
    coverage: dict[str, float]


@dataclass
class NetworkAttributeSummary:
    network: str
    attribute: str
    n_nodes: int
    n_edges: int
    true_mean: float
    population_variance: float
    replicate_variance: float
    empirical_de: float
    estimators: list[EstimatorSummary]
    fom_rejection: dict[str, float]
    strata: list[StratumSummary]


@dataclass
class ExperimentReport:
    config: dict
    summaries: list[NetworkAttributeSummary]
    correlations: dict[str, dict[str, float | None]]
    failures: dict[str, str]
    replications: dict[str, list[Replication]] = field(repr=False, default_factory=dict)


def _summarize(g: Graph, attribute: str, net_id: str, reps: list[Replication], cfg: ExperimentConfig) -> NetworkAttributeSummary:
    y = g.attribute(attribute)
    mu = float(np.nanmean(y))
    S = cfg.rds.sample_size
    mu_hats = np.array([r.mu_hat for r in reps])
    pop = population_sampling_variance(mu_hats, mu)
    srs = mu * (1 - mu) / S
    emp_de = pop / srs if srs > 0 else float("nan")
    ests = []
    for name in cfg.estimators:
        v = np.array([r.variances[name] for r in reps])
        fin = v[np.isfinite(v)]
        mean_v = float(fin.mean()) if len(fin) else float("nan")
        ests.append(
            EstimatorSummary(
                name,
                mean_v,
                mean_v - pop,
                mean_v / pop if pop > 0 else float("nan"),
                coverage_rate(mu_hats, v, mu, cfg.z),
                mean_v / srs if srs > 0 else float("nan"),
                int(len(v) - len(fin)),
            )
        )
    pvals = np.array([r.fom_p for r in reps])
    rejection = {str(a): float(np.mean(np.nan_to_num(pvals, nan=1.0) < a)) for a in cfg.alphas}
    strata = []
    for verdict in (NOT_FOM, MAY_BE_FOM, INCONCLUSIVE):
        # verdicts are recorded at the loosest alpha
        sel = [r for r in reps if r.fom_verdict == verdict]
        est_de, cov = {}, {}
        for name in cfg.estimators:
            v = np.array([r.variances[name] for r in sel])
            fin = v[np.isfinite(v)]
            est_de[name] = float(fin.mean() / srs) if len(fin) and srs > 0 else float("nan")
            cov[name] = coverage_rate([r.mu_hat for r in sel], v, mu, cfg.z) if sel else float("nan")
        strata.append(StratumSummary(verdict, len(sel), emp_de if sel else float("nan"), est_de, cov))
    return NetworkAttributeSummary(
        net_id,
        attribute,
        g.n_nodes,
        g.n_edges,
        mu,
        pop,
        float(np.var(mu_hats)),
        emp_de,
        ests,
        rejection,
        strata,
    )


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run every network x attribute cell; failures are isolated per network."""
    summaries: list[NetworkAttributeSummary] = []
    failures: dict[str, str] = {}
    all_reps: dict[str, list[Replication]] = {}
    for src in cfg.networks:
        try:
            g = load_network(src, cfg.master_seed)
            missing = [a for a in cfg.attributes if a not in g.attributes]
            if missing:
                raise KeyError(f"attributes {missing} not present")
            cells = []
            for attribute in cfg.attributes:
                reps = _run_replications(g, attribute, cfg, src.id)
                cells.append((attribute, reps, _summarize(g, attribute, src.id, reps, cfg)))
        except Exception as exc:  # noqa: BLE001 - sweep must survive one bad network
            logger.error("network %s failed: %s", src.id, exc)
            failures[src.id] = f"{type(exc).__name__}: {exc}"
            continue
        for attribute, reps, summary in cells:
            all_reps[f"{src.id}/{attribute}"] = reps
            summaries.append(summary)
    correlations: dict[str, dict[str, float | None]] = {}
    for attribute in cfg.attributes:
        rows = [s for s in summaries if s.attribute == attribute]
        correlations[attribute] = {}
        for k, name in enumerate(cfg.estimators):
            per_net = [([s.estimators[k].mean_variance], s.population_variance) for s in rows]
            correlations[attribute][name] = bias_ratio_correlation(per_net).correlation
    return ExperimentReport(cfg.to_dict(), summaries, correlations, failures, all_reps)


REPORT_COLUMNS = (
    "network",
    "attribute",
    "estimator",
    "n_nodes",
    "true_mean",
    "population_variance",
    "replicate_variance",
    "empirical_de",
    "mean_estimated_variance",
    "bias",
    "ratio",
    "coverage",
    "mean_estimated_de",
    "failures",
)


def _num(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return x


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _num(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _version(mod: str) -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version(mod)
    except PackageNotFoundError:
        return "unknown"


def write_report(report: ExperimentReport, outdir: str | Path) -> None:
    """``report.csv`` (one row per network/attribute/estimator),
    ``replications.csv`` and a ``manifest.json`` run record."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for s in report.summaries:
            for e in s.estimators:
                w.writerow(
                    [s.network, s.attribute, e.estimator, s.n_nodes, repr(s.true_mean), repr(s.population_variance),
                     repr(s.replicate_variance), repr(s.empirical_de), repr(e.mean_variance), repr(e.bias),
                     repr(e.ratio), repr(e.coverage), repr(e.mean_estimated_de), e.failures]
                )
    estimators = report.config["estimators"]
    with (out / "replications.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["network", "attribute", "replication", "mu_hat", *estimators, "fom_p", "fom_verdict"])
        for key in sorted(report.replications):
            net, attr = key.rsplit("/", 1)
            for r in report.replications[key]:
                w.writerow([net, attr, r.index, repr(r.mu_hat), *(repr(r.variances[e]) for e in estimators), repr(r.fom_p), r.fom_verdict])
    manifest = {
        "version": __version__,
        "dependencies": {m: _version(m) for m in ("numpy", "scipy", "networkx")},
        # worker count does not affect results, so it stays out of the record
        "config": {k: v for k, v in report.config.items() if k != "parallelism"},
        "seed_rule": "sha256(master_seed|network|attribute|replication)[:8] little-endian",
        "summaries": [asdict(s) for s in report.summaries],
        "correlations": report.correlations,
        "failures": report.failures,
    }
    (out / "manifest.json").write_text(json.dumps(_clean(manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8")
