"""Simulated sellers behind a descending-clock price interface.

Mechanisms see a :class:`PriceClock`: the number of sellers, the budget, and
an ``offer(u, price) -> bool`` call.  Private costs live on the agents and are
only read back by the harness and the verification layer.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

__all__ = [
    "ClockViolation",
    "Truthful",
    "AlwaysReject",
    "RejectBelow",
    "AcceptMargin",
    "SellerAgent",
    "Market",
    "PriceClock",
    "CostModel",
    "gen_costs",
    "read_costs",
    "write_costs",
]


class ClockViolation(RuntimeError):
    """A seller received a price higher than one already offered to them."""


# -- strategies --------------------------------------------------------------


@dataclass(frozen=True)
class Truthful:
    name = "truthful"

    def accepts(self, price: float, cost: float) -> bool:
        return price >= cost


@dataclass(frozen=True)
class AlwaysReject:
    name = "always-reject"

    def accepts(self, price: float, cost: float) -> bool:
        return False


@dataclass(frozen=True)
class RejectBelow:
    """Accept exactly the prices at or above a fixed threshold, ignoring cost."""

    tau: float
    name = "reject-below"

    def accepts(self, price, cost):
        return price >= self.tau


@dataclass(frozen=True)
class AcceptMargin:
    """Keep accepting down to ``delta`` below the true cost."""

    delta: float
    name = "accept-margin"

    def accepts(self, price, cost):
        return price >= cost - self.delta


# -- agents --------------------------------------------------------------------


@dataclass
class SellerAgent:
    id: int
    _cost: float = field(repr=False)
    strategy: object = field(default_factory=Truthful)
    last_offer: float | None = None

    def __post_init__(self):
        if self._cost < 0:
            raise ValueError(f"seller {self.id}: cost must be non-negative")

    def offer(self, price: float) -> bool:
        if price < 0:
            raise ValueError(f"seller {self.id}: negative price {price}")
        if self.last_offer is not None and price > self.last_offer:
            raise ClockViolation(
                f"seller {self.id}: price rose from {self.last_offer!r} to {price!r}"
            )
        self.last_offer = price
        return self.strategy.accepts(price, self._cost)


class PriceClock(Protocol):
    """Everything a mechanism may touch."""

    n: int
    budget: float

    def offer(self, u: int, price: float) -> bool: ...


class Market:
    """One auction's worth of sellers plus the buyer's budget.

    Stateful (agents remember their last offer), so each run needs its own
    instance; :meth:`clone` gives a fresh copy.
    """

    def __init__(self, costs: Sequence[float], budget: float, strategies: dict[int, object] | None = None):
        if budget <= 0:
            raise ValueError("budget must be positive")
        self.budget = float(budget)
        strategies = strategies or {}
        self.agents = [
            SellerAgent(i, float(c), strategies.get(i, Truthful())) for i, c in enumerate(costs)
        ]
        self.n = len(self.agents)
        self.transcript: list[tuple[int, float, bool]] = []

    def offer(self, u: int, price: float) -> bool:
        accepted = self.agents[u].offer(price)
        self.transcript.append((u, price, accepted))
        return accepted

    def true_costs(self) -> list[float]:
        return [a._cost for a in self.agents]

    def strategies(self) -> dict[int, object]:
        return {a.id: a.strategy for a in self.agents}

    def clone(self) -> "Market":
        return Market(self.true_costs(), self.budget, self.strategies())

    def with_strategy(self, u: int, strategy: object) -> "Market":
        strategies = self.strategies()
        strategies[u] = strategy
        return Market(self.true_costs(), self.budget, strategies)

    def with_cost(self, u: int, cost: float) -> "Market":
        costs = self.true_costs()
        costs[u] = cost
        return Market(costs, self.budget, self.strategies())


# -- cost generation -----------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """``kind`` is one of ``uniform``, ``stddev-proportional``, ``explicit``."""

    kind: str = "uniform"
    lo: float = 0.0
    hi: float = 1.0
    target_mean: float = 0.1
    values: tuple[float, ...] = ()
    seed: int = 0


def gen_costs(model: CostModel, n: int, aux: Sequence[float] | None = None) -> list[float]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if model.kind == "uniform":
        if model.lo < 0 or model.hi < model.lo:
            raise ValueError("uniform costs need 0 <= lo <= hi")
        rng = np.random.default_rng(model.seed)
        return rng.uniform(model.lo, model.hi, size=n).tolist()
    if model.kind == "stddev-proportional":
        if aux is None or len(aux) != n:
            raise ValueError("stddev-proportional costs need one aux score per seller")
        scores = np.asarray(aux, dtype=float)
        if (scores < 0).any():
            raise ValueError("aux scores must be non-negative")
        mean = scores.mean()
        if mean <= 0:
            raise ValueError("aux scores must have positive mean")
        return (model.target_mean * scores / mean).tolist()
    if model.kind == "explicit":
        if len(model.values) != n:
            raise ValueError(f"explicit cost list has {len(model.values)} entries, expected {n}")
        if any(c < 0 for c in model.values):
            raise ValueError("costs must be non-negative")
        return [float(c) for c in model.values]
    raise ValueError(f"unknown cost model {model.kind!r}")


def read_costs(path: str | Path) -> list[float]:
    """Read an ``id,cost`` CSV with header; ids must be exactly ``0..n-1``."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "cost"]:
            raise ValueError(f"{path}: expected header 'id,cost'")
        pairs = {}
        for row in reader:
            pairs[int(row["id"])] = float(row["cost"])
    if sorted(pairs) != list(range(len(pairs))):
        raise ValueError(f"{path}: ids must be dense 0..n-1")
    return [pairs[i] for i in range(len(pairs))]


def write_costs(path: str | Path, costs: Sequence[float]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "cost"])
        for i, c in enumerate(costs):
            w.writerow([i, repr(float(c))])
