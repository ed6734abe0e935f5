"""Regularized greedy baselines with public costs, plus budget truncation.

Allocation only: these run with true costs visible and carry no payments.
Definitions follow the standard forms of the comparators:

* distorted greedy (Harshaw et al. 2019) with cardinality ``k`` (default ``n``),
  score ``(1 - 1/k)^(k-i-1) * v(u|S) - c(u)`` at step ``i``, step skipped when
  the best score is not positive;
* ROI greedy (Jin et al. 2021), best ``v(u|S) / c(u)`` among items whose
  marginal covers their cost;
* cost-scaled greedy (Nikolakaki et al. 2021), best ``v(u|S) - 2 c(u)`` while
  positive.

Ties go to the lowest node id.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .valuation import ValuationOracle

__all__ = [
    "GreedySequence",
    "distorted_greedy",
    "roi_greedy",
    "cost_scaled_greedy",
    "budget_truncate",
    "BASELINES",
]


@dataclass
class GreedySequence:
    nodes: list[int] = field(default_factory=list)
    gains: list[float] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)

    def append(self, u: int, gain: float, cost: float) -> None:
        if u in self.nodes:
            raise ValueError(f"node {u} selected twice")
        self.nodes.append(u)
        self.gains.append(gain)
        self.costs.append(cost)

    def __len__(self):
        return len(self.nodes)


def _remaining(n: int, state) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    if state.members:
        mask[state.members] = False
    return np.flatnonzero(mask)


def distorted_greedy(oracle: ValuationOracle, costs: Sequence[float], k: int | None = None) -> GreedySequence:
    n = oracle.n
    k = max(n, 1) if k is None else k
    if k < 1:
        raise ValueError("k must be >= 1")
    c = np.asarray(costs, dtype=float)
    state = oracle.empty_state()
    seq = GreedySequence()
    for i in range(k):
        cand = _remaining(n, state)
        if not len(cand):
            break
        with_u = oracle.query_add_many(state, cand)
        gains = with_u - state.value
        scores = (1.0 - 1.0 / k) ** (k - (i + 1)) * gains - c[cand]
        best = int(np.argmax(scores))
        if scores[best] > 0:
            u = int(cand[best])
            seq.append(u, float(gains[best]), float(c[u]))
            oracle.commit(state, u, float(with_u[best]))
    return seq


def roi_greedy(oracle: ValuationOracle, costs: Sequence[float]) -> GreedySequence:
    n = oracle.n
    c = np.asarray(costs, dtype=float)
    state = oracle.empty_state()
    seq = GreedySequence()
    while True:
        cand = _remaining(n, state)
        if not len(cand):
            break
        with_u = oracle.query_add_many(state, cand)
        gains = with_u - state.value
        cc = c[cand]
        ok = np.where(cc > 0, gains >= cc, gains > 0)
        if not ok.any():
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(cc > 0, gains / np.where(cc > 0, cc, 1.0), math.inf)
        ratio = np.where(ok, ratio, -math.inf)
        best = int(np.argmax(ratio))
        u = int(cand[best])
        seq.append(u, float(gains[best]), float(c[u]))
        oracle.commit(state, u, float(with_u[best]))
    return seq


def cost_scaled_greedy(oracle: ValuationOracle, costs: Sequence[float]) -> GreedySequence:
    n = oracle.n
    c = np.asarray(costs, dtype=float)
    state = oracle.empty_state()
    seq = GreedySequence()
    while True:
        cand = _remaining(n, state)
        if not len(cand):
            break
        with_u = oracle.query_add_many(state, cand)
        gains = with_u - state.value
        scores = gains - 2.0 * c[cand]
        best = int(np.argmax(scores))
        if not scores[best] > 0:
            break
        u = int(cand[best])
        seq.append(u, float(gains[best]), float(c[u]))
        oracle.commit(state, u, float(with_u[best]))
    return seq


def budget_truncate(seq: GreedySequence | Sequence[int], costs: Sequence[float], B: float) -> list[int]:
    """Longest prefix of the selection order whose true cost fits in ``B``."""
    if B <= 0:
        raise ValueError("budget must be positive")
    nodes = seq.nodes if isinstance(seq, GreedySequence) else list(seq)
    out = []
    spent = 0.0
    for u in nodes:
        spent += costs[u]
        if spent > B:
            break
        out.append(u)
    return out


BASELINES = {
    "distorted": distorted_greedy,
    "roi": roi_greedy,
    "cost-scaled": cost_scaled_greedy,
}
