"""Exact minimum vertex cover: the case-study problem.

Graphs live on a fixed vertex universe ``0..n-1``. Rows and vertex sets are
Python ints used as bitsets (bit ``v`` set = vertex ``v``). Deleting vertices
only clears bits of ``present``; the adjacency rows are shared with the
graph loaded at startup, so every instance is an induced subgraph.
"""
from __future__ import annotations

import itertools
import logging
import math
import sys
import time
from dataclasses import dataclass

import numpy as np

from .problem import INF, Branch, ProblemAdapter

log = logging.getLogger(__name__)

BASIC = "basic"
OPTIMIZED = "optimized"
ENCODINGS = (BASIC, OPTIMIZED)


class FormatError(ValueError):
    pass


class DimacsError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        super().__init__(f"line {lineno}: {message}" if lineno else message)
        self.lineno = lineno


def bits(mask: int):
    """Yield the set bit positions of ``mask`` in increasing order."""
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def popcount(mask: int) -> int:
    return mask.bit_count()


class Graph:
    """Induced subgraph of a fixed universe plus the partial solution.

    ``rows[u]`` may mention vertices outside ``present``; the neighbourhood
    of ``u`` in this graph is ``rows[u] & present``.
    """

    __slots__ = ("n", "rows", "present", "solution")

    def __init__(self, n: int, rows, present: int | None = None, solution: int = 0):
        self.n = n
        self.rows = tuple(rows)
        self.present = (1 << n) - 1 if present is None else present
        self.solution = solution

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        rows = [0] * n
        for u, v in edges:
            if u == v:
                continue
            rows[u] |= 1 << v
            rows[v] |= 1 << u
        return cls(n, rows)

    def neighbors(self, u: int) -> int:
        return self.rows[u] & self.present

    def degree(self, u: int) -> int:
        return (self.rows[u] & self.present).bit_count()

    def edges(self) -> list[tuple[int, int]]:
        out = []
        for u in bits(self.present):
            for v in bits(self.rows[u] & self.present & ~((2 << u) - 1)):
                out.append((u, v))
        return out

    @property
    def m(self) -> int:
        return sum(self.degree(u) for u in bits(self.present)) // 2

    @property
    def order(self) -> int:
        return self.present.bit_count()

    def has_edges(self) -> bool:
        p = self.present
        return any(self.rows[u] & p for u in bits(p))

    def restricted_rows(self) -> list[int]:
        p = self.present
        return [self.rows[u] & p if p >> u & 1 else 0 for u in range(self.n)]

    def remove(self, mask: int, to_solution: int = 0) -> "Graph":
        return Graph._make(self.n, self.rows, self.present & ~mask, self.solution | to_solution)

    @staticmethod
    def _make(n, rows, present, solution) -> "Graph":
        g = object.__new__(Graph)
        g.n, g.rows, g.present, g.solution = n, rows, present, solution
        return g

    def same_as(self, other: "Graph") -> bool:
        """Same universe, present set, induced edges and partial solution."""
        return (self.n == other.n and self.present == other.present
                and self.solution == other.solution
                and self.restricted_rows() == other.restricted_rows())

    def is_cover(self, cover: int) -> bool:
        """True if ``cover`` touches every edge among present vertices."""
        p = self.present
        for u in bits(p & ~cover):
            if self.rows[u] & p & ~cover:
                return False
        return True

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, present={self.order}, m={self.m}, |S|={popcount(self.solution)})"


# ---------------------------------------------------------------- reductions

def reduce(g: Graph) -> Graph:
    """Apply the degree-0, degree-1 and degree-2-triangle rules to a fixpoint.

    Each pass runs the three rules in that order over all present vertices
    and the loop repeats while anything changed.
    """
    rows = g.rows
    present, sol = g.present, g.solution
    changed = True
    while changed:
        changed = False
        for u in bits(present):
            if not present >> u & 1:
                continue
            if not rows[u] & present:
                present &= ~(1 << u)
                changed = True
        for u in bits(present):
            if not present >> u & 1:
                continue
            nb = rows[u] & present
            if nb and nb & (nb - 1) == 0:
                sol |= nb
                present &= ~(nb | (1 << u))
                changed = True
        for u in bits(present):
            if not present >> u & 1:
                continue
            nb = rows[u] & present
            if nb.bit_count() != 2:
                continue
            v = (nb & -nb).bit_length() - 1
            w = (nb ^ (1 << v)).bit_length() - 1
            if rows[v] >> w & 1:
                sol |= nb
                present &= ~(nb | (1 << u))
                changed = True
    if present == g.present and sol == g.solution:
        return g
    return Graph._make(g.n, rows, present, sol)


def max_degree_vertex(g: Graph) -> int:
    """Vertex of maximum degree; lowest index among ties. -1 if no vertices."""
    best, best_d, p, rows = -1, -1, g.present, g.rows
    for u in bits(p):
        d = (rows[u] & p).bit_count()
        if d > best_d:
            best, best_d = u, d
    return best


def branch(g: Graph, best_value: int) -> Branch:
    """One step of the max-degree branching algorithm.

    Children are ``G - u`` with ``u`` taken and ``G - N(u)`` with ``N(u)``
    taken, left first.
    """
    if popcount(g.solution) >= best_value:
        return Branch()
    g = reduce(g)
    size = popcount(g.solution)
    if size >= best_value:
        return Branch()
    if not g.present:
        return Branch(solution=g.solution)
    u = max_degree_vertex(g)
    nb = g.rows[u] & g.present
    left = Graph._make(g.n, g.rows, g.present & ~(1 << u), g.solution | (1 << u))
    right = Graph._make(g.n, g.rows, g.present & ~nb, g.solution | nb)
    return Branch(children=(left, right))


@dataclass
class SequentialResult:
    size: int
    cover: int
    nodes: int


def mvc_sequential(g: Graph, best_value: int = INF, deadline: float | None = None) -> SequentialResult:
    """Plain recursive branch and bound; no framework involved.

    ``nodes`` counts calls to :func:`branch` so runs can be compared with the
    parallel runtime node for node. ``deadline`` is a ``time.monotonic()``
    value past which TimeoutError is raised.
    """
    best = [best_value, None]
    nodes = 0

    def search(inst: Graph) -> None:
        nonlocal nodes
        nodes += 1
        if deadline is not None and nodes % 1024 == 0 and time.monotonic() > deadline:
            raise TimeoutError("sequential solve exceeded its time limit")
        out = branch(inst, best[0])
        if out.solution is not None:
            size = popcount(out.solution)
            if size < best[0]:
                best[0], best[1] = size, out.solution
            return
        for child in out.children:
            search(child)

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * g.n + 1000))
    try:
        search(g)
    finally:
        sys.setrecursionlimit(limit)
    if best[1] is None:
        return SequentialResult(best_value, 0, nodes)
    if not g.is_cover(best[1]):
        raise AssertionError("solver returned a set that is not a vertex cover")
    return SequentialResult(best[0], best[1], nodes)


def brute_force_mvc(g: Graph, max_n: int = 26) -> int:
    """Minimum cover size by exhaustive enumeration (test oracle).

    Candidate sets are scanned in chunks of consecutive bitmasks with numpy;
    the smallest popcount among covering masks wins.
    """
    verts = list(bits(g.present))
    k = len(verts)
    if k > max_n:
        raise ValueError(f"brute force is limited to {max_n} vertices, got {k}")
    index = {v: i for i, v in enumerate(verts)}
    edges = [(index[u], index[v]) for u, v in g.edges()]
    if not edges:
        return 0
    best = k
    chunk = 1 << min(k, 20)
    for start in range(0, 1 << k, chunk):
        masks = np.arange(start, start + chunk, dtype=np.int64)
        ok = np.ones(chunk, dtype=bool)
        for a, b in edges:
            ok &= ((masks >> a) | (masks >> b)) & 1 == 1
        if ok.any():
            best = min(best, int(np.bitwise_count(masks[ok]).min()))
    return best


def brute_force_mvc_combinations(g: Graph, max_n: int = 26) -> int:
    """Same oracle by increasing cardinality; slower, used to cross-check."""
    verts = list(bits(g.present))
    if len(verts) > max_n:
        raise ValueError(f"brute force is limited to {max_n} vertices, got {len(verts)}")
    for k in range(len(verts) + 1):
        for combo in itertools.combinations(verts, k):
            mask = sum(1 << v for v in combo)
            if g.is_cover(mask):
                return k
    return len(verts)


# ---------------------------------------------------------------- encodings

def _nbytes(n: int) -> int:
    return (n + 7) // 8


def _to_bytes(mask: int, n: int) -> bytes:
    return mask.to_bytes(_nbytes(n), "little")


def _from_bytes(data: bytes, n: int) -> int:
    mask = int.from_bytes(data, "little")
    if mask >> n:
        raise FormatError("bit vector has bits set beyond the vertex universe")
    return mask


def encode(g: Graph, encoding: str = OPTIMIZED) -> bytes:
    """Serialise a task.

    basic:     [4B n LE][n rows of ceil(n/8) bytes][solution bits][present bits]
    optimized: [present bits][solution bits], each ceil(n/8) bytes
    """
    n = g.n
    if encoding == OPTIMIZED:
        return _to_bytes(g.present, n) + _to_bytes(g.solution, n)
    if encoding == BASIC:
        parts = [n.to_bytes(4, "little")]
        parts.extend(_to_bytes(r, n) for r in g.restricted_rows())
        parts.append(_to_bytes(g.solution, n))
        parts.append(_to_bytes(g.present, n))
        return b"".join(parts)
    raise ValueError(f"unknown encoding {encoding!r}")


def decode(data: bytes, encoding: str = OPTIMIZED, base: Graph | None = None) -> Graph:
    if encoding == OPTIMIZED:
        if base is None:
            raise FormatError("optimized decoding needs the graph loaded at startup")
        n, nb = base.n, _nbytes(base.n)
        if len(data) != 2 * nb:
            raise FormatError(f"optimized task for n={n} must be {2 * nb} bytes, got {len(data)}")
        present = _from_bytes(data[:nb], n)
        solution = _from_bytes(data[nb:], n)
        return Graph._make(n, base.rows, present, solution)
    if encoding == BASIC:
        if len(data) < 4:
            raise FormatError("basic task shorter than its header")
        n = int.from_bytes(data[:4], "little")
        nb = _nbytes(n)
        if len(data) != 4 + (n + 2) * nb:
            raise FormatError(f"basic task for n={n} must be {4 + (n + 2) * nb} bytes, got {len(data)}")
        if base is not None and base.n != n:
            raise FormatError(f"task universe {n} does not match loaded graph {base.n}")
        off = 4
        rows = []
        for _ in range(n):
            rows.append(_from_bytes(data[off:off + nb], n))
            off += nb
        solution = _from_bytes(data[off:off + nb], n)
        present = _from_bytes(data[off + nb:off + 2 * nb], n)
        return Graph._make(n, tuple(rows), present, solution)
    raise ValueError(f"unknown encoding {encoding!r}")


# ---------------------------------------------------------------- I/O

def parse_dimacs(text: str) -> Graph:
    """Parse DIMACS edge format (``c`` comments, ``p edge n m``, ``e u v``).

    Vertices are 1-indexed in the file. Self loops and duplicate edges are
    dropped and counted in ``parse_dimacs.last_warnings``.
    """
    n = None
    rows: list[int] = []
    warnings = {"self_loops": 0, "duplicates": 0}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] == "c":
            continue
        parts = line.split()
        if parts[0] == "p":
            if n is not None:
                raise DimacsError("second problem line", lineno)
            if len(parts) < 4:
                raise DimacsError("problem line must read 'p edge n m'", lineno)
            try:
                n = int(parts[2])
            except ValueError:
                raise DimacsError(f"bad vertex count {parts[2]!r}", lineno) from None
            rows = [0] * n
        elif parts[0] == "e":
            if n is None:
                raise DimacsError("edge before the problem line", lineno)
            try:
                u, v = int(parts[1]) - 1, int(parts[2]) - 1
            except (IndexError, ValueError):
                raise DimacsError(f"malformed edge line {line!r}", lineno) from None
            if not (0 <= u < n and 0 <= v < n):
                raise DimacsError(f"vertex index out of range 1..{n}", lineno)
            if u == v:
                warnings["self_loops"] += 1
                continue
            if rows[u] >> v & 1:
                warnings["duplicates"] += 1
                continue
            rows[u] |= 1 << v
            rows[v] |= 1 << u
        else:
            raise DimacsError(f"unrecognised line {line!r}", lineno)
    if n is None:
        raise DimacsError("missing 'p edge n m' line")
    parse_dimacs.last_warnings = warnings
    if warnings["self_loops"] or warnings["duplicates"]:
        log.warning("ignored %(self_loops)d self loops and %(duplicates)d duplicate edges", warnings)
    return Graph(n, rows)


parse_dimacs.last_warnings = {"self_loops": 0, "duplicates": 0}


def read_dimacs(path) -> Graph:
    with open(path) as f:
        return parse_dimacs(f.read())


def to_dimacs(g: Graph, comment: str | None = None) -> str:
    edges = g.edges()
    lines = []
    if comment:
        lines.extend(f"c {c}" for c in comment.splitlines())
    lines.append(f"p edge {g.n} {len(edges)}")
    lines.extend(f"e {u + 1} {v + 1}" for u, v in edges)
    return "\n".join(lines) + "\n"


def gen_gnp(n: int, p: float, seed) -> Graph:
    """G(n, p): every one of the n(n-1)/2 pairs is an edge with probability p.

    ``seed`` is anything ``numpy.random.default_rng`` accepts.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must be in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return Graph.from_edges(n, zip(iu[keep].tolist(), ju[keep].tolist()))


# ---------------------------------------------------------------- adapter

class VertexCoverProblem(ProblemAdapter):
    """Vertex cover on induced subgraphs of ``base``."""

    max_branching_factor = 2

    def __init__(self, base: Graph, encoding: str = OPTIMIZED):
        if encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {encoding!r}")
        self.base = base
        self.encoding = encoding

    def root(self) -> Graph:
        return self.base

    def branch(self, instance: Graph, best_value: int) -> Branch:
        return branch(instance, best_value)

    def serialize(self, instance: Graph) -> bytes:
        return encode(instance, self.encoding)

    def deserialize(self, data: bytes) -> Graph:
        return decode(data, self.encoding, self.base)

    def priority(self, instance: Graph) -> int:
        return instance.order

    def solution_value(self, solution: int) -> int:
        return popcount(solution)

    def serialize_solution(self, solution: int) -> bytes:
        return _to_bytes(solution, self.base.n)

    def deserialize_solution(self, data: bytes) -> int:
        return _from_bytes(data, self.base.n)


def expected_gnp_edges(n: int, p: float) -> tuple[float, float]:
    """Mean and standard deviation of the G(n, p) edge count."""
    pairs = n * (n - 1) // 2
    return pairs * p, math.sqrt(pairs * p * (1 - p))
