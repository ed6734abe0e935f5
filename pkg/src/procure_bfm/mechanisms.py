"""Budget-feasible descending clock mechanisms.

``bfm_swm`` targets welfare ``v(S) - c(S)``; ``bfm_vm`` targets the valuation
``v(S)``.  Both run rounds of geometrically growing thresholds ``rho_t``; in each
round every still-active seller is greedily routed to one of ``ell`` candidate
sets, offered a price derived from its marginal value, and either joins the set,
drops out, or trips the break condition that ends the round.

The mechanisms only talk to sellers through :class:`~procure_bfm.market.PriceClock`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .market import PriceClock
from .valuation import ValuationOracle

__all__ = [
    "MechanismParams",
    "PRESETS",
    "preset",
    "RoundRecord",
    "AuctionTrace",
    "MechanismResult",
    "bfm_swm",
    "bfm_vm",
]


@dataclass(frozen=True)
class MechanismParams:
    ell: int
    alpha: float
    beta: float
    eps: float = 0.1

    def validate(self, kind: str) -> None:
        if self.ell not in (1, 2):
            raise ValueError(f"ell must be 1 or 2, got {self.ell}")
        if not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if kind == "swm":
            if not self.beta > 1:
                raise ValueError(f"beta must exceed 1 for bfm-swm, got {self.beta}")
            if not self.eps > 0:
                raise ValueError(f"eps must be positive, got {self.eps}")
        elif kind == "vm":
            if self.beta != 0:
                raise ValueError("bfm-vm requires beta = 0")
        else:
            raise ValueError(f"unknown mechanism kind {kind!r}")


PRESETS = {
    "swm-nonmonotone": MechanismParams(ell=2, alpha=1 + 2 * math.sqrt(6) / 3, beta=4.0, eps=0.1),
    "swm-monotone": MechanismParams(ell=1, alpha=1 + math.sqrt(6) / 2, beta=3.0, eps=0.1),
    "vm": MechanismParams(ell=2, alpha=1 + math.sqrt(3), beta=0.0, eps=0.1),
}


def preset(name: str) -> MechanismParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class RoundRecord:
    """Final state of one round.  Prices are those in force when the round ended."""

    t: int
    rho: float
    sets: list[list[int]]
    set_prices: list[list[float]]
    set_values: list[float]
    break_event: tuple[int, int] | None = None

    def payment(self, i: int) -> float:
        return math.fsum(self.set_prices[i])


@dataclass
class AuctionTrace:
    rounds: list[RoundRecord] = field(default_factory=list)
    u_star_history: list[int] = field(default_factory=list)
    price_history: dict[int, list[float]] = field(default_factory=dict)
    exits: dict[int, int] = field(default_factory=dict)
    query_delta: int = 0


@dataclass
class MechanismResult:
    mechanism: str
    winners: tuple[int, ...]
    payments: dict[int, float]
    total_payment: float
    valuation: float
    rounds: int
    queries: int
    trace: AuctionTrace
    params: MechanismParams
    degenerate: bool = False
    welfare: float | None = None

    def with_costs(self, costs) -> "MechanismResult":
        """Fill in ``welfare`` from true costs (the harness knows them, we don't)."""
        self.welfare = self.valuation - math.fsum(costs[u] for u in self.winners)
        return self


def bfm_swm(
    oracle: ValuationOracle,
    market: PriceClock,
    params: MechanismParams,
    order_seed: int | None = None,
    max_rounds: int = 100_000,
) -> MechanismResult:
    """Welfare-maximising clock auction with a protected singleton ``u*``."""
    params.validate("swm")
    return _ClockAuction(oracle, market, params, "swm", order_seed, max_rounds).run()


def bfm_vm(
    oracle: ValuationOracle,
    market: PriceClock,
    params: MechanismParams,
    order_seed: int | None = None,
    max_rounds: int = 100_000,
) -> MechanismResult:
    """Valuation-maximising variant: thresholds start at ``max v(u)``, no ``u*``."""
    params.validate("vm")
    return _ClockAuction(oracle, market, params, "vm", order_seed, max_rounds).run()


class _ClockAuction:
    def __init__(self, oracle, market, params, kind, order_seed, max_rounds):
        if oracle.n != market.n:
            raise ValueError(f"oracle has {oracle.n} nodes but market has {market.n} sellers")
        self.oracle = oracle
        self.market = market
        self.params = params
        self.kind = kind
        self.max_rounds = max_rounds
        n = market.n
        if order_seed is None:
            self.order = list(range(n))
        else:
            self.order = np.random.default_rng(order_seed).permutation(n).tolist()
        self.B = market.budget
        self.trace = AuctionTrace()
        self.price: dict[int, float] = {}
        self.R: set[int] = set()
        self.u_star: int | None = None

    # -- pieces --------------------------------------------------------------
    def _offer(self, u: int, p: float, t: int) -> bool:
        self.trace.price_history.setdefault(u, []).append(p)
        if self.market.offer(u, p):
            self.price[u] = p
            return True
        self.R.discard(u)
        self.trace.exits[u] = t
        return False

    def _record(self, t, rho, states, brk) -> RoundRecord:
        rec = RoundRecord(
            t=t,
            rho=rho,
            sets=[list(s.members) for s in states],
            set_prices=[[self.price[u] for u in s.members] for s in states],
            set_values=[s.value for s in states],
            break_event=brk,
        )
        self.trace.rounds.append(rec)
        return rec

    def _round(self, t: int, rho: float, excluded: set[int]) -> RoundRecord:
        oracle, ell, beta = self.oracle, self.params.ell, self.params.beta
        states = [oracle.empty_state() for _ in range(ell)]
        paid = [0.0] * ell
        brk = None
        queue = [u for u in self.order if u in self.R and u not in excluded]
        for u in queue:
            with_u = [oracle.query_add(states[i], u) for i in range(ell)]
            j = 0
            for i in range(1, ell):
                if with_u[i] - states[i].value > with_u[j] - states[j].value:
                    j = i
            gain = with_u[j] - states[j].value
            p = min(self.price[u], gain / (beta + rho / self.B))
            if p < 0:
                # no seller with non-negative cost accepts; drop without an offer
                self.R.discard(u)
                self.trace.exits[u] = t
                continue
            if not self._offer(u, p, t):
                continue
            if self.kind == "swm":
                tripped = with_u[j] - (paid[j] + p) > rho
            else:
                tripped = with_u[j] > rho
            if tripped:
                brk = (u, j)
                if self.kind == "swm":
                    self.u_star = u
                    self.trace.u_star_history.append(u)
                break
            oracle.commit(states[j], u, with_u[j])
            paid[j] += p
        return self._record(t, rho, states, brk)

    def _line_one(self) -> None:
        for u in range(self.market.n):
            if self._offer(u, self.B, 0):
                self.R.add(u)

    # -- main loops ------------------------------------------------------------
    def run(self) -> MechanismResult:
        q0 = self.oracle.queries
        self._line_one()
        if self.kind == "swm":
            alpha = self.params.alpha
            rho = self.params.eps / alpha
            t = 0
            prev: set[int] = set()
        else:
            if not self.R:
                return self._finish(q0, [], 0, degenerate=True)
            t, rho, prev = self._vm_init()
            if rho <= 0:
                return self._finish(q0, [], t, degenerate=True)
            alpha = self.params.alpha

        while True:
            t += 1
            if t > self.max_rounds:
                raise RuntimeError(f"no termination after {self.max_rounds} rounds")
            rho = alpha * rho
            excluded = set(prev)
            if self.u_star is not None:
                excluded.add(self.u_star)
            rec = self._round(t, rho, excluded)
            current = {u for s in rec.sets for u in s}
            remaining = self.R - prev - current
            remaining.discard(self.u_star)
            if not remaining:
                break
            prev = current

        return self._finish(q0, self._candidates(t), t)

    def _vm_init(self):
        active = [u for u in self.order if u in self.R]
        singles = [self.oracle.evaluate([u]) for u in active]
        best = max(range(len(active)), key=lambda k: (singles[k], -active[k]))
        rho = singles[best]
        u1 = active[best]
        states = [self.oracle.empty_state() for _ in range(self.params.ell)]
        self.oracle.commit(states[0], u1, rho)
        self._record(1, rho, states, None)
        return 1, rho, {u1}

    def _candidates(self, M: int) -> list[tuple[list[int], float, float]]:
        """(members, value, payment) in tie-break order."""
        recs = [r for r in self.trace.rounds if r.t == M]
        if M >= 2:
            recs += [r for r in self.trace.rounds if r.t == M - 1]
        out = []
        for rec in recs:
            for i, members in enumerate(rec.sets):
                out.append((members, rec.set_values[i], rec.payment(i)))
        if self.kind == "swm" and self.u_star is not None:
            u = self.u_star
            out.append(([u], self.oracle.evaluate([u]), self.price[u]))
        return out

    def _finish(self, q0, candidates, M, degenerate=False) -> MechanismResult:
        best = None
        best_score = -math.inf
        for members, value, pay in candidates:
            score = value - pay if self.kind == "swm" else value
            if best is None or score > best_score:
                best, best_score = members, score
        winners = tuple(sorted(best or ()))
        payments = {u: self.price[u] for u in winners}
        self.trace.query_delta = self.oracle.queries - q0
        return MechanismResult(
            mechanism="bfm-swm" if self.kind == "swm" else "bfm-vm",
            winners=winners,
            payments=payments,
            total_payment=math.fsum(payments.values()),
            valuation=self.oracle.peek(winners),
            rounds=M,
            queries=self.trace.query_delta,
            trace=self.trace,
            params=self.params,
            degenerate=degenerate,
        )
