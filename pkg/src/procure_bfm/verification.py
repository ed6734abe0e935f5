"""Brute-force optima and property auditors for small instances."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .market import AcceptMargin, AlwaysReject, Market, RejectBelow, Truthful
from .mechanisms import MechanismParams, MechanismResult, bfm_swm, bfm_vm
from .valuation import CoverageValuation, SimilarityDiversityValuation, ValuationOracle

__all__ = [
    "TOL",
    "MAX_BRUTE_FORCE_N",
    "OptimumCertificate",
    "GuaranteeSpec",
    "GUARANTEES",
    "guarantees",
    "GuaranteeOutcome",
    "Check",
    "PropertyReport",
    "PropertyViolation",
    "brute_force_opt",
    "audit_run",
    "check_guarantee",
    "swm_round_bound",
    "vm_round_bound",
    "default_policies",
    "ProbeEntry",
    "ProbeReport",
    "truthfulness_probe",
    "CorpusInstance",
    "random_instance",
    "corpus",
]

TOL = 1e-9
MAX_BRUTE_FORCE_N = 22


def _bits(mask: int, n: int) -> tuple[int, ...]:
    return tuple(i for i in range(n) if mask >> i & 1)


@dataclass(frozen=True)
class OptimumCertificate:
    objective: str
    opt_set: tuple[int, ...]
    opt_value: float
    value: float
    cost: float
    budget: float
    enumerated_count: int


def brute_force_opt(
    oracle: ValuationOracle, costs: Sequence[float], B: float, objective: str = "welfare"
) -> OptimumCertificate:
    """Exhaustive optimum over budget-feasible sets; query-free.

    Maximises ``v(S) - c(S)`` or ``v(S)`` subject to ``c(S) <= B``.  Ties go to
    the lexicographically smallest sorted member tuple.
    """
    n = oracle.n
    if n > MAX_BRUTE_FORCE_N:
        raise ValueError(f"brute force limited to n <= {MAX_BRUTE_FORCE_N}, got n = {n}")
    if objective not in ("welfare", "valuation"):
        raise ValueError(f"unknown objective {objective!r}")
    if len(costs) != n:
        raise ValueError("one cost per ground-set element required")
    values = oracle.all_values()
    masks = np.arange(1 << n, dtype=np.int64)
    total = np.zeros(1 << n, dtype=float)
    for i, c in enumerate(costs):
        total += ((masks >> i) & 1) * float(c)
    score = values - total if objective == "welfare" else values.copy()
    score[total > B] = -np.inf
    best = score.max()
    tied = np.flatnonzero(score == best)
    mask = min((int(m) for m in tied), key=lambda m: _bits(m, n))
    members = _bits(mask, n)
    return OptimumCertificate(
        objective=objective,
        opt_set=members,
        opt_value=float(best),
        value=float(values[mask]),
        cost=float(total[mask]),
        budget=float(B),
        enumerated_count=1 << n,
    )


# -- guarantees ----------------------------------------------------------------


@dataclass(frozen=True)
class GuaranteeSpec:
    gamma: float
    additive_slack: float
    objective: str

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


def guarantees(eps: float = 0.1) -> dict[str, GuaranteeSpec]:
    """Guarantee per preset; the additive slack of the welfare bounds scales with ``eps``."""
    return {
        "swm-nonmonotone": GuaranteeSpec(0.0328, eps / 4, "welfare"),
        "swm-monotone": GuaranteeSpec(0.0877, eps / 3, "welfare"),
        "vm": GuaranteeSpec(1 / (12 + 4 * math.sqrt(3)), 0.0, "valuation"),
    }


GUARANTEES = guarantees(0.1)


@dataclass(frozen=True)
class GuaranteeOutcome:
    passed: bool
    margin: float
    achieved: float
    required: float


def check_guarantee(
    result: MechanismResult, cert: OptimumCertificate, spec: GuaranteeSpec, true_costs: Sequence[float]
) -> GuaranteeOutcome:
    if cert.objective != spec.objective:
        raise ValueError(f"certificate is for {cert.objective}, guarantee is for {spec.objective}")
    if spec.objective == "welfare":
        achieved = result.valuation - math.fsum(true_costs[u] for u in result.winners)
        required = spec.gamma * cert.value - cert.cost - spec.additive_slack
    else:
        achieved = result.valuation
        required = spec.gamma * cert.value
    margin = achieved - required
    return GuaranteeOutcome(margin >= -TOL, margin, achieved, required)


def _ceil(x: float) -> int:
    return math.ceil(x - 1e-12)


def swm_round_bound(opt: float, params: MechanismParams) -> int | None:
    """``2 + ceil(log_alpha(2 OPT / eps))``; ``None`` when ``OPT <= 0``.

    For ``0 < OPT < eps / 2`` the logarithm is negative and the raw formula
    drops below one round, so the log term is clamped at zero.
    """
    if opt <= 0:
        return None
    return 2 + max(0, _ceil(math.log(2 * opt / params.eps) / math.log(params.alpha)))


def vm_round_bound(n: int, params: MechanismParams) -> int:
    return 2 + _ceil(math.log(2 * max(n, 1)) / math.log(params.alpha))


# -- run audits ------------------------------------------------------------------


@dataclass
class Check:
    name: str
    status: str  # "pass" | "fail" | "skip"
    margin: float | None = None
    witness: dict = field(default_factory=dict)


@dataclass
class PropertyReport:
    checks: list[Check] = field(default_factory=list)

    def add(self, name, ok, margin=None, **witness):
        self.checks.append(Check(name, "pass" if ok else "fail", margin, witness if not ok else {}))

    def skip(self, name, reason):
        self.checks.append(Check(name, "skip", None, {"reason": reason}))

    @property
    def ok(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if c.status == "fail"]

    def status(self, name: str) -> str:
        return next(c.status for c in self.checks if c.name == name)


class PropertyViolation(AssertionError):
    def __init__(self, report: PropertyReport, context: str = ""):
        self.report = report
        lines = [f"{c.name}: margin={c.margin} {c.witness}" for c in report.failures]
        super().__init__(f"{context} property violations:\n  " + "\n  ".join(lines))


def audit_run(
    result: MechanismResult,
    market: Market,
    oracle: ValuationOracle,
    mechanism_kind: str | None = None,
    cert: OptimumCertificate | None = None,
) -> PropertyReport:
    """Check budget feasibility, IR, surplus, per-set invariants, the clock
    contract and (given a welfare certificate for SWM) the round bound."""
    kind = mechanism_kind or ("swm" if result.mechanism == "bfm-swm" else "vm")
    if oracle.n != market.n or any(not 0 <= u < market.n for u in result.winners):
        raise ValueError("result, market and oracle describe different instances")
    params = result.params
    B = market.budget
    costs = market.true_costs()
    strategies = market.strategies()
    rep = PropertyReport()

    consistent = set(result.payments) == set(result.winners) and math.isclose(
        result.total_payment, math.fsum(result.payments.values()), rel_tol=0, abs_tol=TOL
    )
    rep.add("payments-consistent", consistent, payments=dict(result.payments), total=result.total_payment)

    rep.add("budget", result.total_payment <= B + TOL, B - result.total_payment, payment=result.total_payment, budget=B)

    truthful = [u for u in result.winners if isinstance(strategies[u], Truthful)]
    if truthful:
        gaps = {u: result.payments[u] - costs[u] for u in truthful}
        worst = min(gaps, key=gaps.get)
        rep.add("individual-rationality", gaps[worst] >= -TOL, gaps[worst], seller=worst,
                payment=result.payments[worst], cost=costs[worst])
    else:
        rep.add("individual-rationality", True, None)

    value = oracle.peek(result.winners)
    if kind == "swm":
        rep.add("surplus", value - result.total_payment >= -TOL, value - result.total_payment,
                value=value, payment=result.total_payment)
    else:
        rep.skip("surplus", "not guaranteed for bfm-vm")

    beta_margin, cap_margin, bad_beta, bad_cap = math.inf, math.inf, None, None
    for rec in result.trace.rounds:
        for i, members in enumerate(rec.sets):
            v = oracle.peek(members)
            p = rec.payment(i)
            if kind == "swm":
                m_beta = v - params.beta * p
                m_cap = rec.rho - (v - p)
            else:
                m_beta = math.inf
                m_cap = rec.rho - v
            if m_beta < beta_margin:
                beta_margin, bad_beta = m_beta, {"t": rec.t, "set": i, "value": v, "payment": p}
            if m_cap < cap_margin:
                cap_margin, bad_cap = m_cap, {"t": rec.t, "set": i, "value": v, "payment": p, "rho": rec.rho}
    if kind == "swm":
        rep.add("beta-ratio", beta_margin >= -TOL, None if math.isinf(beta_margin) else beta_margin, **(bad_beta or {}))
    else:
        rep.skip("beta-ratio", "beta = 0 for bfm-vm")
    rep.add("set-cap", cap_margin >= -TOL, None if math.isinf(cap_margin) else cap_margin, **(bad_cap or {}))

    rhos = [r.rho for r in result.trace.rounds]
    growth_ok = all(math.isclose(b, params.alpha * a, rel_tol=1e-12) for a, b in zip(rhos, rhos[1:]))
    rep.add("threshold-growth", growth_ok, None, rhos=rhos)

    bad_clock = None
    for u, prices in result.trace.price_history.items():
        if any(p < 0 for p in prices) or any(b > a for a, b in zip(prices, prices[1:])):
            bad_clock = (u, prices)
            break
    rep.add("clock-monotone", bad_clock is None, None, **({"seller": bad_clock[0], "prices": bad_clock[1]} if bad_clock else {}))

    if kind == "vm":
        bound = vm_round_bound(market.n, params)
        rep.add("round-bound", result.rounds <= bound, bound - result.rounds, rounds=result.rounds, bound=bound)
    elif cert is None or cert.objective != "welfare":
        rep.skip("round-bound", "no welfare certificate")
    else:
        bound = swm_round_bound(cert.opt_value, params)
        if bound is None:
            rep.skip("round-bound", "OPT <= 0")
        else:
            rep.add("round-bound", result.rounds <= bound, bound - result.rounds, rounds=result.rounds, bound=bound)
    return rep


# -- truthfulness --------------------------------------------------------------


def default_policies(B: float) -> list:
    return [AlwaysReject(), RejectBelow(0.5 * B), RejectBelow(B), AcceptMargin(0.05)]


@dataclass(frozen=True)
class ProbeEntry:
    seller: int
    policy: object
    truthful_utility: float
    deviant_utility: float

    @property
    def passed(self) -> bool:
        return self.deviant_utility <= self.truthful_utility + TOL


@dataclass
class ProbeReport:
    entries: list[ProbeEntry] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def failures(self) -> list[ProbeEntry]:
        return [e for e in self.entries if not e.passed]


def _runner(mechanism_kind: str) -> Callable:
    if mechanism_kind in ("swm", "bfm-swm"):
        return bfm_swm
    if mechanism_kind in ("vm", "bfm-vm"):
        return bfm_vm
    raise ValueError(f"unknown mechanism {mechanism_kind!r}")


def _utility(result: MechanismResult, u: int, cost: float) -> float:
    return result.payments[u] - cost if u in result.payments else 0.0


def truthfulness_probe(
    oracle: ValuationOracle,
    market_template: Market,
    params: MechanismParams,
    mechanism_kind: str,
    deviation_policies: Sequence | None = None,
    max_n: int = 10,
) -> ProbeReport:
    """Rerun the auction with one seller at a time following a scripted deviation."""
    if market_template.n > max_n:
        raise ValueError(f"truthfulness probe limited to n <= {max_n}")
    run = _runner(mechanism_kind)
    report = ProbeReport()
    if not deviation_policies:
        return report
    costs = market_template.true_costs()
    honest = run(oracle.clone(), market_template.clone(), params)
    for u in range(market_template.n):
        base = _utility(honest, u, costs[u])
        for policy in deviation_policies:
            res = run(oracle.clone(), market_template.with_strategy(u, policy), params)
            report.entries.append(ProbeEntry(u, policy, base, _utility(res, u, costs[u])))
    return report


# -- seeded corpora --------------------------------------------------------------


@dataclass
class CorpusInstance:
    id: str
    oracle: ValuationOracle
    costs: list[float]
    budget: float

    def market(self) -> Market:
        return Market(self.costs, self.budget)


def random_instance(rng: np.random.Generator, kind: str, n: int, budget_fraction: float, ident: str) -> CorpusInstance:
    """Small random instance with uniform(0, 1) costs and ``B = fraction * c(N)``."""
    if kind == "coverage":
        p = rng.uniform(0.15, 0.6)
        adjacency = [
            {v for v in range(n) if v != u and rng.random() < p} for u in range(n)
        ]
        oracle: ValuationOracle = CoverageValuation(adjacency)
    elif kind == "similarity":
        d = int(rng.integers(2, 9))
        oracle = SimilarityDiversityValuation(vectors=rng.random((n, d)))
    else:
        raise ValueError(f"unknown corpus kind {kind!r}")
    costs = rng.uniform(0.0, 1.0, size=n).tolist()
    budget = budget_fraction * math.fsum(costs)
    return CorpusInstance(ident, oracle, costs, budget)


def corpus(
    count: int,
    seed: int,
    kinds: Sequence[str] = ("coverage", "similarity"),
    n_range: tuple[int, int] = (4, 12),
    budget_fractions: Sequence[float] = (0.25, 0.5, 1.0),
) -> Iterator[CorpusInstance]:
    """Deterministic stream of ``count`` instances cycling through kinds and budgets."""
    rng = np.random.default_rng(seed)
    for k in range(count):
        kind = kinds[k % len(kinds)]
        frac = budget_fractions[(k // len(kinds)) % len(budget_fractions)]
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        yield random_instance(rng, kind, n, frac, f"{kind}-{seed}-{k}")
