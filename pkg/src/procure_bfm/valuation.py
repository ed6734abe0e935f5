"""Submodular valuation oracles with query counting.

Every oracle maps a subset of the ground set ``{0, ..., n-1}`` to a
non-negative real.  Public evaluation paths (``evaluate``, ``marginal``,
``query_add``, ``query_add_many``) bump a shared query counter; ``peek`` and
``all_values`` are query-free and reserved for auditing and brute force.

Mechanisms grow candidate sets one element at a time, so oracles also expose
an incremental :class:`SetState` that lets ``v(S + u)`` be answered without
re-evaluating ``S`` from scratch.
"""
from __future__ import annotations

import csv
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SetState",
    "ValuationOracle",
    "CoverageValuation",
    "SimilarityDiversityValuation",
    "TableValuation",
    "SubmodularityReport",
    "load_coverage_graph",
    "read_coverage_graph",
    "build_similarity_valuation",
    "read_vectors",
    "write_vectors_binary",
    "check_submodular",
    "check_submodular_exhaustive",
]

TOL = 1e-9
DENSE_SIMILARITY_LIMIT = 4096


@dataclass
class SetState:
    """Incrementally maintained candidate set ``S`` with cached ``v(S)``."""

    members: list[int] = field(default_factory=list)
    member_set: set[int] = field(default_factory=set)
    value: float = 0.0
    extra: object = None

    def __contains__(self, u: int) -> bool:
        return u in self.member_set

    def __len__(self) -> int:
        return len(self.members)


class ValuationOracle:
    """Base class: subclasses implement ``_value`` and optionally the
    incremental hooks ``_init_extra``, ``_added_value`` and ``_commit_extra``."""

    kind = "abstract"

    def __init__(self, n: int):
        self.n = int(n)
        self._queries = 0
        self._lock = threading.Lock()

    # -- query accounting -------------------------------------------------
    @property
    def queries(self) -> int:
        return self._queries

    def _count(self, k: int = 1) -> None:
        with self._lock:
            self._queries += k

    def clone(self) -> "ValuationOracle":
        """Shallow copy sharing immutable data, with a fresh counter."""
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other._queries = 0
        other._lock = threading.Lock()
        return other

    # -- validation -------------------------------------------------------
    def _check_nodes(self, nodes: Iterable[int]) -> tuple[int, ...]:
        out = tuple(int(u) for u in nodes)
        for u in out:
            if u < 0 or u >= self.n:
                raise ValueError(f"node id {u} outside ground set of size {self.n}")
        return out

    # -- public evaluation ------------------------------------------------
    def evaluate(self, S: Iterable[int]) -> float:
        nodes = self._check_nodes(S)
        self._count()
        return self._value(frozenset(nodes))

    def marginal(self, u: int, S: Iterable[int], cached_base: float | None = None) -> float:
        """``v(S + u) - v(S)``; one query if ``cached_base`` is given, else two."""
        base = frozenset(self._check_nodes(S))
        (u,) = self._check_nodes([u])
        if u in base:
            raise ValueError(f"node {u} already in S")
        if cached_base is None:
            cached_base = self.evaluate(base)
        return self.evaluate(base | {u}) - cached_base

    def peek(self, S: Iterable[int]) -> float:
        """Query-free evaluation for auditing."""
        return self._value(frozenset(self._check_nodes(S)))

    def all_values(self) -> np.ndarray:
        """Query-free values of every subset, indexed by bitmask."""
        n = self.n
        out = np.empty(1 << n, dtype=float)
        for mask in range(1 << n):
            out[mask] = self._value(frozenset(i for i in range(n) if mask >> i & 1))
        return out

    def _value(self, S: frozenset) -> float:
        raise NotImplementedError

    # -- incremental sets -------------------------------------------------
    def empty_state(self) -> SetState:
        return SetState(extra=self._init_extra())

    def query_add(self, state: SetState, u: int) -> float:
        """Return ``v(S + u)`` for the state's set ``S``; costs one query."""
        self._count()
        return self._added_value(state, u)

    def query_add_many(self, state: SetState, candidates: Sequence[int]) -> np.ndarray:
        """Vector of ``v(S + u)`` for each candidate; one query per candidate."""
        cand = np.asarray(candidates, dtype=np.int64)
        self._count(len(cand))
        return self._added_values(state, cand)

    def commit(self, state: SetState, u: int, new_value: float) -> None:
        """Add ``u`` to the state; ``new_value`` must be ``v(S + u)``.  No query."""
        self._commit_extra(state, u)
        state.members.append(u)
        state.member_set.add(u)
        state.value = new_value

    def _init_extra(self) -> object:
        return None

    def _added_value(self, state: SetState, u: int) -> float:
        return self._value(frozenset(state.member_set | {u}))

    def _added_values(self, state: SetState, cand: np.ndarray) -> np.ndarray:
        return np.array([self._added_value(state, int(u)) for u in cand], dtype=float)

    def _commit_extra(self, state: SetState, u: int) -> None:
        pass


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------


class CoverageValuation(ValuationOracle):
    """``v(S) = |union of T(u) for u in S|`` over directed out-neighbourhoods.

    ``adjacency[u]`` is ``T(u)``.  Targets are usually node ids of the same
    graph but may be any non-negative item ids.
    """

    kind = "coverage"

    def __init__(self, adjacency: Sequence[Iterable[int]], labels: Sequence[str] | None = None):
        super().__init__(len(adjacency))
        self.adjacency = tuple(frozenset(int(v) for v in nbrs) for nbrs in adjacency)
        targets = [v for t in self.adjacency for v in t]
        if any(v < 0 for v in targets):
            raise ValueError("covered item ids must be non-negative")
        # graphs cover their own nodes; other callers may cover a wider item universe
        self.universe = max([self.n - 1, *targets]) + 1 if self.n or targets else 0
        self.labels = tuple(labels) if labels is not None else None
        sizes = np.fromiter((len(t) for t in self.adjacency), dtype=np.int64, count=self.n)
        self._indptr = np.concatenate([[0], np.cumsum(sizes)])
        self._indices = np.fromiter(
            (v for t in self.adjacency for v in sorted(t)), dtype=np.int64, count=int(sizes.sum())
        )
        self._masks: list[int] | None = None

    def _value(self, S: frozenset) -> float:
        covered: set[int] = set()
        for u in S:
            covered |= self.adjacency[u]
        return float(len(covered))

    def all_values(self) -> np.ndarray:
        n = self.n
        if self._masks is None:
            self._masks = [sum(1 << v for v in t) for t in self.adjacency]
        cover = [0] * (1 << n)
        out = np.zeros(1 << n, dtype=float)
        for mask in range(1, 1 << n):
            low = mask & -mask
            cover[mask] = cover[mask ^ low] | self._masks[low.bit_length() - 1]
            out[mask] = cover[mask].bit_count()
        return out

    def _init_extra(self):
        return (set(), np.zeros(self.universe, dtype=bool))

    def _added_value(self, state, u):
        covered, _ = state.extra
        return state.value + len(self.adjacency[u] - covered)

    def _added_values(self, state, cand):
        _, mask = state.extra
        fresh = np.concatenate([[0], np.cumsum(~mask[self._indices])])
        gains = fresh[self._indptr[1:]] - fresh[self._indptr[:-1]]
        return state.value + gains[cand].astype(float)

    def _commit_extra(self, state, u):
        covered, mask = state.extra
        covered |= self.adjacency[u]
        mask[self._indices[self._indptr[u]:self._indptr[u + 1]]] = True


def load_coverage_graph(source: str, symmetrize: bool = False) -> CoverageValuation:
    """Parse SNAP-style edge-list text into a coverage oracle.

    A line ``u v`` puts ``v`` in ``T(u)``.  Node tokens are re-indexed densely
    in first-appearance order; ``#`` lines and blank lines are skipped.
    """
    index: dict[str, int] = {}
    edges: list[tuple[int, int]] = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'u v', got {raw!r}")
        a, b = (index.setdefault(tok, len(index)) for tok in parts)
        edges.append((a, b))
    adjacency: list[set[int]] = [set() for _ in range(len(index))]
    for a, b in edges:
        adjacency[a].add(b)
        if symmetrize:
            adjacency[b].add(a)
    return CoverageValuation(adjacency, labels=list(index))


def read_coverage_graph(path: str | Path, symmetrize: bool = False) -> CoverageValuation:
    return load_coverage_graph(Path(path).read_text(), symmetrize=symmetrize)


# ---------------------------------------------------------------------------
# Similarity / diversity
# ---------------------------------------------------------------------------


class SimilarityDiversityValuation(ValuationOracle):
    """``v(S) = (1/n) * (sum_{u in N, v in S} s[u,v] - sum_{u,v in S} s[u,v])``.

    Non-monotone submodular for symmetric non-negative ``s``.  Built either from
    an explicit matrix or from row vectors (``s = V V^T``); above
    ``DENSE_SIMILARITY_LIMIT`` vectors the matrix is never materialised.
    """

    kind = "similarity-diversity"

    def __init__(self, similarity: np.ndarray | None = None, vectors: np.ndarray | None = None):
        if (similarity is None) == (vectors is None):
            raise ValueError("pass exactly one of similarity or vectors")
        if similarity is not None:
            s = np.asarray(similarity, dtype=float)
            if s.ndim != 2 or s.shape[0] != s.shape[1]:
                raise ValueError("similarity must be a square matrix")
            if not np.allclose(s, s.T, rtol=0.0, atol=TOL):
                raise ValueError("similarity matrix must be symmetric")
            if (s < 0).any():
                raise ValueError("similarity entries must be non-negative")
            super().__init__(s.shape[0])
            self._s = s
            self._vectors = None
            self._colsum = s.sum(axis=0)
            self._diag = np.diag(s).copy()
        else:
            V = np.asarray(vectors, dtype=float)
            super().__init__(V.shape[0])
            self._vectors = V
            self._s = V @ V.T if self.n <= DENSE_SIMILARITY_LIMIT else None
            if self._s is not None and (self._s < -TOL).any():
                raise ValueError("inner products must be non-negative")
            self._colsum = V @ V.sum(axis=0)
            self._diag = np.einsum("ij,ij->i", V, V)

    @property
    def similarity(self) -> np.ndarray:
        if self._s is None:
            return self._vectors @ self._vectors.T
        return self._s

    def _rows(self, idx: Sequence[int]) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if self._s is not None:
            return self._s[idx]
        return self._vectors[idx] @ self._vectors.T

    def _value(self, S: frozenset) -> float:
        if not S:
            return 0.0
        idx = np.fromiter(S, dtype=np.int64, count=len(S))
        rows = self._rows(idx)
        inner = rows[:, idx].sum()
        return float((self._colsum[idx].sum() - inner) / self.n)

    def all_values(self) -> np.ndarray:
        n = self.n
        s = self.similarity
        out = np.empty(1 << n, dtype=float)
        chunk = 1 << 14
        for start in range(0, 1 << n, chunk):
            masks = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
            X = ((masks[:, None] >> np.arange(n)) & 1).astype(float)
            quad = np.einsum("mi,ij,mj->m", X, s, X)
            out[start:start + len(masks)] = (X @ self._colsum - quad) / n
        return out

    def _init_extra(self):
        return np.zeros(self.n, dtype=float)

    def _added_value(self, state, u):
        acc = state.extra
        return state.value + (self._colsum[u] - 2.0 * acc[u] - self._diag[u]) / self.n

    def _added_values(self, state, cand):
        acc = state.extra
        return state.value + (self._colsum[cand] - 2.0 * acc[cand] - self._diag[cand]) / self.n

    def _commit_extra(self, state, u):
        state.extra += self._rows([u])[0]


def build_similarity_valuation(vectors: Sequence[Sequence[float]] | np.ndarray) -> SimilarityDiversityValuation:
    """Similarity-diversity oracle with ``s[u,v]`` = inner product of vectors."""
    rows = [list(map(float, vec)) for vec in vectors]
    if not rows:
        raise ValueError("at least one vector is required")
    d = len(rows[0])
    if d < 1 or any(len(r) != d for r in rows):
        raise ValueError("all vectors must share one dimension d >= 1")
    return SimilarityDiversityValuation(vectors=np.array(rows, dtype=float))


def read_vectors(path: str | Path) -> np.ndarray:
    """Read vectors from CSV (one per line) or from the binary format.

    Binary layout, little-endian: ``uint32 n``, ``uint32 d``, then ``n*d``
    float32 values in row-major order.  Files ending in ``.csv`` or ``.txt``
    are read as CSV; anything else as binary.
    """
    path = Path(path)
    if path.suffix.lower() in {".csv", ".txt"}:
        with path.open(newline="") as fh:
            rows = [[float(x) for x in row] for row in csv.reader(fh) if row and not row[0].startswith("#")]
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ValueError(f"{path}: empty or ragged vector file")
        return np.array(rows, dtype=float)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated header")
    n, d = struct.unpack("<II", raw[:8])
    body = np.frombuffer(raw, dtype="<f4", offset=8)
    if body.size != n * d:
        raise ValueError(f"{path}: expected {n * d} floats, found {body.size}")
    return body.reshape(n, d).astype(float)


def write_vectors_binary(path: str | Path, vectors: np.ndarray) -> None:
    V = np.asarray(vectors, dtype="<f4")
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<II", *V.shape))
        fh.write(V.tobytes())


# ---------------------------------------------------------------------------
# Table
# ---------------------------------------------------------------------------


class TableValuation(ValuationOracle):
    """Explicit value table over all ``2^n`` subsets (``n <= 16``)."""

    kind = "table"
    MAX_N = 16

    def __init__(self, n: int, table: dict[frozenset, float] | Sequence[float]):
        if n > self.MAX_N:
            raise ValueError(f"table valuations support n <= {self.MAX_N}")
        super().__init__(n)
        values = np.empty(1 << n, dtype=float)
        if isinstance(table, dict):
            seen = 0
            for key, val in table.items():
                mask = 0
                for u in self._check_nodes(key):
                    mask |= 1 << u
                values[mask] = float(val)
                seen += 1
            if seen != 1 << n:
                raise ValueError(f"table must cover all {1 << n} subsets, got {seen}")
        else:
            if len(table) != 1 << n:
                raise ValueError(f"table must cover all {1 << n} subsets")
            values[:] = table
        if values[0] != 0.0:
            raise ValueError("v(empty set) must be 0")
        self._table = values

    def _value(self, S):
        mask = 0
        for u in S:
            mask |= 1 << u
        return float(self._table[mask])

    def all_values(self):
        return self._table.copy()


# ---------------------------------------------------------------------------
# Submodularity checks
# ---------------------------------------------------------------------------


@dataclass
class SubmodularityReport:
    checked: int
    violations: list[tuple[tuple[int, ...], tuple[int, ...], int, float, float]]

    @property
    def ok(self) -> bool:
        return not self.violations


def check_submodular(oracle: ValuationOracle, sample_count: int, seed: int = 0) -> SubmodularityReport:
    """Sample triples ``X <= Y``, ``u not in Y`` and flag ``v(u|Y) > v(u|X) + 1e-9``.

    Uses the query-free path; deterministic for a fixed seed.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    n = oracle.n
    rng = np.random.default_rng(seed)
    violations = []
    checked = 0
    if n == 0:
        return SubmodularityReport(0, [])
    for _ in range(sample_count):
        u = int(rng.integers(n))
        others = np.array([i for i in range(n) if i != u], dtype=np.int64)
        in_y = rng.random(len(others)) < rng.random()
        Y = others[in_y]
        X = Y[rng.random(len(Y)) < rng.random()]
        X_set, Y_set = frozenset(X.tolist()), frozenset(Y.tolist())
        gain_x = oracle._value(X_set | {u}) - oracle._value(X_set)
        gain_y = oracle._value(Y_set | {u}) - oracle._value(Y_set)
        checked += 1
        if gain_y > gain_x + TOL:
            violations.append((tuple(sorted(X_set)), tuple(sorted(Y_set)), u, gain_x, gain_y))
    return SubmodularityReport(checked, violations)


def check_submodular_exhaustive(oracle: ValuationOracle) -> SubmodularityReport:
    """Check diminishing returns on every triple; intended for ``n <= 10``."""
    n = oracle.n
    vals = oracle.all_values()
    violations = []
    checked = 0
    for Y in range(1 << n):
        X = Y
        while True:
            for u in range(n):
                if Y >> u & 1:
                    continue
                bit = 1 << u
                gain_x = vals[X | bit] - vals[X]
                gain_y = vals[Y | bit] - vals[Y]
                checked += 1
                if gain_y > gain_x + TOL:
                    violations.append((_bits(X, n), _bits(Y, n), u, float(gain_x), float(gain_y)))
            if X == 0:
                break
            X = (X - 1) & Y
    return SubmodularityReport(checked, violations)


def _bits(mask: int, n: int) -> tuple[int, ...]:
    return tuple(i for i in range(n) if mask >> i & 1)
