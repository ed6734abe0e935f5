"""Instance generation, experiment sweeps and CSV reporting."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import BASELINES, budget_truncate
from .market import CostModel, Market, gen_costs, read_costs
from .mechanisms import MechanismParams, bfm_swm, bfm_vm, preset
from .valuation import (
    CoverageValuation,
    SimilarityDiversityValuation,
    ValuationOracle,
    read_coverage_graph,
    read_vectors,
)
from .verification import PropertyViolation, audit_run

__all__ = [
    "SCHEMA",
    "COLUMNS",
    "InstanceSpec",
    "Instance",
    "parse_instance_spec",
    "gen_instance",
    "load_dataset",
    "write_edge_list",
    "ExperimentConfig",
    "run_point",
    "run_sweep",
    "read_rows",
    "report_summary",
    "BUNDLED_POWERLAW",
]

SCHEMA = "# procure-bfm results schema v1"
COLUMNS = [
    "dataset", "mechanism", "objective", "budget", "repetition", "objective_value",
    "total_payment", "size", "oracle_queries", "wallclock_ms", "rounds", "seed",
]
MECHANISMS = ("bfm-swm", "bfm-vm", *BASELINES)
LARGE_N = 20_000
BUNDLED_POWERLAW = Path(__file__).parent / "data" / "powerlaw_2000.txt"


# -- instances -------------------------------------------------------------------


@dataclass(frozen=True)
class InstanceSpec:
    kind: str
    n: int
    edge_prob: float = 0.01
    exponent: float = 2.5
    d: int = 8


@dataclass
class Instance:
    name: str
    oracle: ValuationOracle
    aux: np.ndarray | None = None


def parse_instance_spec(text: str) -> InstanceSpec:
    """``kind:key=value,...``, e.g. ``power-law-digraph:n=2000,exponent=2.5``."""
    kind, _, rest = text.partition(":")
    kwargs = {}
    for item in filter(None, rest.split(",")):
        key, _, val = item.partition("=")
        key = {"p": "edge_prob"}.get(key.strip(), key.strip())
        if key not in ("n", "edge_prob", "exponent", "d"):
            raise ValueError(f"unknown instance parameter {key!r}")
        kwargs[key] = int(val) if key in ("n", "d") else float(val)
    if "n" not in kwargs:
        raise ValueError("instance spec needs n=")
    return InstanceSpec(kind.strip(), **kwargs)


def _targets(rng: np.random.Generator, u: int, n: int, k: int) -> set[int]:
    picks = rng.choice(n - 1, size=k, replace=False)
    return {int(v) + (v >= u) for v in picks}


def gen_instance(spec: InstanceSpec | str, seed: int = 0) -> Instance:
    """Deterministic synthetic instance.

    ``random-digraph``: every ordered pair ``(u, v)``, ``u != v``, is an edge with
    probability ``edge_prob`` (sampled per node as a binomial out-degree plus
    uniform targets).  ``power-law-digraph``: node out-degrees are Zipf draws with
    the given exponent, capped at ``n - 1``, targets uniform without self-loops.
    ``random-vectors``: ``n`` uniform [0, 1) vectors of dimension ``d`` with
    per-vector standard deviations as aux scores.
    """
    if isinstance(spec, str):
        spec = parse_instance_spec(spec)
    if spec.n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    n = spec.n
    name = f"{spec.kind}-n{n}-s{seed}"
    if spec.kind == "random-digraph":
        if not 0 <= spec.edge_prob <= 1:
            raise ValueError("edge_prob must lie in [0, 1]")
        degrees = rng.binomial(n - 1, spec.edge_prob, size=n)
        adjacency = [_targets(rng, u, n, int(k)) for u, k in enumerate(degrees)]
        return Instance(name, CoverageValuation(adjacency))
    if spec.kind == "power-law-digraph":
        if spec.exponent <= 1:
            raise ValueError("power-law exponent must exceed 1")
        degrees = np.minimum(rng.zipf(spec.exponent, size=n), n - 1)
        adjacency = [_targets(rng, u, n, int(k)) for u, k in enumerate(degrees)]
        return Instance(name, CoverageValuation(adjacency))
    if spec.kind == "random-vectors":
        if spec.d < 1:
            raise ValueError("d must be >= 1")
        V = rng.random((n, spec.d))
        return Instance(name, SimilarityDiversityValuation(vectors=V), aux=V.std(axis=1))
    raise ValueError(f"unknown instance kind {spec.kind!r}")


def write_edge_list(oracle: CoverageValuation, path: str | Path, header: str = "") -> None:
    with Path(path).open("w") as fh:
        if header:
            fh.write(f"# {header}\n")
        for u, nbrs in enumerate(oracle.adjacency):
            for v in sorted(nbrs):
                fh.write(f"{u} {v}\n")


def load_dataset(source: str, symmetrize: bool = False, seed: int = 0, large: bool = False) -> Instance:
    """A path (edge list, or ``.csv``/``.f32``/``.bin`` vectors) or ``gen:<spec>``."""
    if source.startswith("gen:"):
        inst = gen_instance(source[4:], seed)
    else:
        path = Path(source)
        if path.suffix.lower() in {".csv", ".f32", ".bin"}:
            V = read_vectors(path)
            inst = Instance(path.stem, SimilarityDiversityValuation(vectors=V), aux=V.std(axis=1))
        else:
            inst = Instance(path.stem, read_coverage_graph(path, symmetrize=symmetrize))
    if inst.oracle.n > LARGE_N and not large:
        raise ValueError(f"{inst.name} has {inst.oracle.n} nodes; pass --large to run above {LARGE_N}")
    return inst


# -- sweeps ----------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    dataset: str
    budgets: Sequence[float]
    mechanisms: Sequence[str] = ("bfm-swm", "distorted", "roi", "cost-scaled")
    preset: str | None = None
    params: MechanismParams | None = None
    cost_model: CostModel = field(default_factory=CostModel)
    cost_file: str | None = None
    objective: str = "welfare"
    seed: int = 0
    repetitions: int = 1
    out: str | None = None
    symmetrize: bool = False
    large: bool = False
    threads: int | None = None

    def validate(self) -> None:
        b = list(self.budgets)
        if not b:
            raise ValueError("at least one budget is required")
        if any(x <= 0 for x in b) or any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError("budgets must be positive and strictly ascending")
        unknown = set(self.mechanisms) - set(MECHANISMS)
        if unknown:
            raise ValueError(f"unknown mechanisms {sorted(unknown)}")
        if self.objective not in ("welfare", "valuation"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


def default_params(mechanism: str, oracle: ValuationOracle, config: ExperimentConfig) -> MechanismParams:
    if config.params is not None:
        return config.params
    if config.preset is not None:
        return preset(config.preset)
    if mechanism == "bfm-vm":
        return preset("vm")
    # coverage is monotone; anything else gets the general-purpose preset
    return preset("swm-monotone" if oracle.kind == "coverage" else "swm-nonmonotone")


def instance_costs(inst: Instance, config: ExperimentConfig, repetition: int) -> list[float]:
    if config.cost_file:
        costs = read_costs(config.cost_file)
        if len(costs) != inst.oracle.n:
            raise ValueError(f"cost file has {len(costs)} sellers, dataset has {inst.oracle.n}")
        return costs
    model = replace(config.cost_model, seed=config.cost_model.seed + config.seed + repetition)
    return gen_costs(model, inst.oracle.n, inst.aux)


def run_point(
    inst: Instance, mechanism: str, costs: list[float], budget: float, config: ExperimentConfig, repetition: int
) -> dict:
    """One row: run, audit (hard failure on any violation), measure."""
    oracle = inst.oracle.clone()
    row = {
        "dataset": inst.name, "mechanism": mechanism, "objective": config.objective,
        "budget": budget, "repetition": repetition, "seed": config.seed,
    }
    start = time.perf_counter()
    if mechanism in ("bfm-swm", "bfm-vm"):
        params = default_params(mechanism, oracle, config)
        market = Market(costs, budget)
        run = bfm_swm if mechanism == "bfm-swm" else bfm_vm
        result = run(oracle, market, params)
        elapsed = time.perf_counter() - start
        report = audit_run(result, market, inst.oracle)
        if not report.ok:
            raise PropertyViolation(report, f"{inst.name} {mechanism} B={budget} rep={repetition}")
        winners = list(result.winners)
        row.update(total_payment=result.total_payment, rounds=result.rounds, oracle_queries=result.queries)
    else:
        seq = BASELINES[mechanism](oracle, costs)
        winners = budget_truncate(seq, costs, budget)
        elapsed = time.perf_counter() - start
        row.update(total_payment=None, rounds=None, oracle_queries=oracle.queries)
    value = inst.oracle.peek(winners)
    spent = math.fsum(costs[u] for u in winners)
    if spent > budget + 1e-9 and mechanism not in ("bfm-swm", "bfm-vm"):
        raise AssertionError(f"{mechanism} truncation exceeded the budget")
    row.update(
        objective_value=value - spent if config.objective == "welfare" else value,
        size=len(winners),
        wallclock_ms=elapsed * 1000.0,
    )
    return row


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _thread_count(config: ExperimentConfig) -> int:
    if config.threads:
        return config.threads
    env = os.environ.get("PROCURE_BFM_THREADS")
    return max(1, int(env)) if env else 1


def run_sweep(config: ExperimentConfig) -> list[dict]:
    """Run every (budget, repetition, mechanism) point; write CSV + plot data
    when ``config.out`` is set.  Rows are ordered by budget, repetition, then
    mechanism regardless of completion order."""
    config.validate()
    inst = load_dataset(config.dataset, config.symmetrize, config.seed, config.large)
    costs = {r: instance_costs(inst, config, r) for r in range(config.repetitions)}
    points = [
        (b, r, m) for b in config.budgets for r in range(config.repetitions) for m in config.mechanisms
    ]
    with ThreadPoolExecutor(max_workers=_thread_count(config)) as pool:
        futures = [pool.submit(run_point, inst, m, costs[r], b, config, r) for b, r, m in points]
        rows = [f.result() for f in futures]
    if config.out:
        write_rows(rows, config.out)
        write_plot_data(rows, str(config.out) + ".plot.json")
    return rows


def write_rows(rows: list[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(SCHEMA + "\n")
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in COLUMNS])


def write_plot_data(rows: list[dict], path: str | Path) -> None:
    series: dict[str, dict[float, list[dict]]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        series[row["mechanism"]][row["budget"]].append(row)
    out = {}
    for mech, by_budget in series.items():
        budgets = sorted(by_budget)
        out[mech] = {
            "budget": budgets,
            "objective_value": [float(np.mean([r["objective_value"] for r in by_budget[b]])) for b in budgets],
            "oracle_queries": [float(np.mean([r["oracle_queries"] for r in by_budget[b]])) for b in budgets],
        }
    Path(path).write_text(json.dumps({"schema": SCHEMA.lstrip("# "), "series": out}, indent=2, sort_keys=True))


def read_rows(path: str | Path) -> list[dict]:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    if reader.fieldnames is None or not {"mechanism", "budget", "objective_value"} <= set(reader.fieldnames):
        raise ValueError(f"{path}: not a results CSV")
    rows = []
    for lineno, raw in enumerate(reader, start=2):
        try:
            rows.append({**raw, "budget": float(raw["budget"]), "objective_value": float(raw["objective_value"])})
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}: bad row {lineno}: {exc}") from None
    return rows


def report_summary(csv_path: str | Path) -> str:
    """Per-budget ratio of our mechanism's mean objective to the best baseline's."""
    rows = read_rows(csv_path)
    means: dict[float, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        means[row["budget"]][row["mechanism"]].append(row["objective_value"])
    ours_name = next((m for m in ("bfm-swm", "bfm-vm") if any(m in v for v in means.values())), None)
    lines = [f"{'budget':>10}  {'ours':>12}  {'best baseline':>14}  ratio"]
    ratios = []
    for budget in sorted(means):
        per = {m: float(np.mean(v)) for m, v in means[budget].items()}
        ours = per.get(ours_name) if ours_name else None
        baselines = {m: v for m, v in per.items() if m not in ("bfm-swm", "bfm-vm")}
        if ours is None or not baselines:
            lines.append(f"{budget:>10g}  {'-' if ours is None else f'{ours:.4f}':>12}  {'-':>14}  n/a")
            continue
        best_name = max(baselines, key=baselines.get)
        best = baselines[best_name]
        if best > 0:
            ratio = ours / best
            ratios.append(ratio)
            shown = f"{ratio:.2f}x"
        else:
            shown = "n/a"
        lines.append(f"{budget:>10g}  {ours:>12.4f}  {best:>14.4f}  {shown} (vs {best_name})")
    if ratios:
        lines.append(f"min {min(ratios):.2f}x  avg {sum(ratios) / len(ratios):.2f}x  max {max(ratios):.2f}x")
    else:
        lines.append("ratios: n/a")
    return "\n".join(lines)
