"""Dependency graphs, binary dependency masks and node orderings.

A :class:`DependencyGraph` is the user-supplied belief about which features
depend on which.  It is turned into a :class:`DependencyMask` whose entry
``[i, o]`` is 1 when input feature ``i`` may influence output feature ``o``.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DIRECTED = "directed"
UNDIRECTED = "undirected"


class GraphError(ValueError):
    """Malformed graph or a graph used in the wrong mode."""


class CycleError(GraphError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = list(cycle)
        super().__init__("directed cycle: " + " -> ".join(self.cycle))


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    kind: str = UNDIRECTED
    sign: str | None = None
    weight: float | None = None

    def __post_init__(self):
        if self.kind not in (DIRECTED, UNDIRECTED):
            raise GraphError(f"unknown edge kind {self.kind!r}")
        if self.sign not in (None, "+", "-"):
            raise GraphError(f"edge sign must be '+' or '-', got {self.sign!r}")


@dataclass(frozen=True)
class DependencyGraph:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...] = ()
    dag: bool = False
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple(self.edges)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        if len(set(nodes)) != len(nodes):
            raise GraphError("node names must be unique")
        index = {n: i for i, n in enumerate(nodes)}
        object.__setattr__(self, "_index", index)
        for e in edges:
            for end in (e.source, e.target):
                if end not in index:
                    raise GraphError(f"edge endpoint {end!r} is not a node")
            if e.source == e.target:
                raise GraphError(f"self-loop on {e.source!r}")
        if self.dag:
            if any(e.kind != DIRECTED for e in edges):
                raise GraphError("a DAG may only contain directed edges")
            cycle = _find_cycle(self)
            if cycle:
                raise CycleError(cycle)

    @classmethod
    def from_edges(cls, nodes: Iterable[str], edges: Iterable, dag: bool = False):
        """Build from ``(u, v)`` / ``(u, v, kind[, sign])`` tuples or :class:`Edge`."""
        out = []
        for e in edges:
            out.append(e if isinstance(e, Edge) else Edge(*e))
        return cls(tuple(nodes), tuple(out), dag=dag)

    def __len__(self):
        return len(self.nodes)

    def index(self, node: str) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise GraphError(f"unknown node {node!r}") from None

    @property
    def is_undirected(self) -> bool:
        return all(e.kind == UNDIRECTED for e in self.edges)

    @property
    def is_directed(self) -> bool:
        return all(e.kind == DIRECTED for e in self.edges)

    def neighbors(self, node: str) -> list[str]:
        """Undirected neighbours (edge direction ignored), in node order."""
        i = self.index(node)
        adj = self.adjacency(directed=False)
        return [self.nodes[j] for j in np.flatnonzero(adj[i])]

    def adjacency(self, directed: bool = True) -> np.ndarray:
        d = len(self.nodes)
        a = np.zeros((d, d), dtype=np.int8)
        for e in self.edges:
            i, j = self._index[e.source], self._index[e.target]
            a[i, j] = 1
            if e.kind == UNDIRECTED or not directed:
                a[j, i] = 1
        return a

    def parents(self, node: str) -> list[str]:
        j = self.index(node)
        return [e.source for e in self.edges if e.kind == DIRECTED and self._index[e.target] == j]

    def children(self, node: str) -> list[str]:
        i = self.index(node)
        return [e.target for e in self.edges if e.kind == DIRECTED and self._index[e.source] == i]

    def edge_signs(self) -> dict[tuple[str, str], str]:
        return {(e.source, e.target): e.sign for e in self.edges if e.sign is not None}


def _find_cycle(g: DependencyGraph) -> list[str] | None:
    d = len(g.nodes)
    succ = [[] for _ in range(d)]
    for e in g.edges:
        if e.kind == DIRECTED:
            succ[g.index(e.source)].append(g.index(e.target))
    color = [0] * d  # 0 new, 1 on stack, 2 done
    parent = [-1] * d
    for root in range(d):
        if color[root]:
            continue
        stack = [(root, iter(sorted(succ[root])))]
        color[root] = 1
        while stack:
            u, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[u] = 2
                stack.pop()
                continue
            if color[nxt] == 0:
                color[nxt] = 1
                parent[nxt] = u
                stack.append((nxt, iter(sorted(succ[nxt]))))
            elif color[nxt] == 1:
                cyc = [nxt]
                w = u
                while w != nxt:
                    cyc.append(w)
                    w = parent[w]
                cyc.append(nxt)
                return [g.nodes[k] for k in reversed(cyc)]
    return None


@dataclass(frozen=True)
class DependencyMask:
    """Binary ``D_in x D_out`` matrix of allowed input -> output paths."""

    matrix: np.ndarray
    row_labels: tuple
    col_labels: tuple

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.int8, copy=True)
        if m.ndim != 2:
            raise ValueError("mask must be a matrix")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        if m.shape != (len(self.row_labels), len(self.col_labels)):
            raise ValueError(
                f"mask shape {m.shape} does not match labels "
                f"({len(self.row_labels)}, {len(self.col_labels)})")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "row_labels", tuple(self.row_labels))
        object.__setattr__(self, "col_labels", tuple(self.col_labels))

    @property
    def shape(self):
        return self.matrix.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, DependencyMask):
            return NotImplemented
        return (self.row_labels == other.row_labels and self.col_labels == other.col_labels
                and np.array_equal(self.matrix, other.matrix))

    def __hash__(self):
        return hash((self.row_labels, self.col_labels, self.matrix.tobytes()))


def neighbor_mask(g: DependencyGraph) -> DependencyMask:
    if not g.is_undirected:
        raise GraphError("neighbor_mask needs an undirected graph; "
                         "use markov_blanket_mask or dependency_mask")
    m = g.adjacency(directed=False)
    np.fill_diagonal(m, 1)
    return DependencyMask(m, g.nodes, g.nodes)


def markov_blanket(g: DependencyGraph, node: str) -> set[str]:
    """Parents, children and co-parents of ``node``."""
    blanket = set(g.parents(node)) | set(g.children(node))
    for child in g.children(node):
        blanket.update(g.parents(child))
    blanket.discard(node)
    return blanket


def markov_blanket_mask(g: DependencyGraph) -> DependencyMask:
    if not g.is_directed:
        raise GraphError("markov_blanket_mask needs a directed graph")
    cycle = _find_cycle(g)
    if cycle:
        raise CycleError(cycle)
    d = len(g)
    m = np.eye(d, dtype=np.int8)
    for j, node in enumerate(g.nodes):
        for other in markov_blanket(g, node):
            m[g.index(other), j] = 1
    return DependencyMask(m, g.nodes, g.nodes)


def moralize(g: DependencyGraph) -> DependencyGraph:
    """Marry co-parents and drop edge directions."""
    pairs = set()
    for e in g.edges:
        pairs.add(frozenset((e.source, e.target)))
    for node in g.nodes:
        ps = sorted(g.parents(node), key=g.index)
        for a in range(len(ps)):
            for b in range(a + 1, len(ps)):
                pairs.add(frozenset((ps[a], ps[b])))
    edges = []
    for p in sorted(pairs, key=lambda s: sorted(g.index(n) for n in s)):
        u, v = sorted(p, key=g.index)
        edges.append(Edge(u, v, UNDIRECTED))
    return DependencyGraph(g.nodes, tuple(edges))


def dependency_mask(g: DependencyGraph) -> DependencyMask:
    """Pick the mask rule from the edge kinds present in ``g``."""
    if g.is_undirected:
        return neighbor_mask(g)
    if g.is_directed:
        return markov_blanket_mask(g)
    return neighbor_mask(moralize(g))


def complement_mask(s: DependencyMask) -> DependencyMask:
    return DependencyMask(1 - s.matrix, s.row_labels, s.col_labels)


def _widths(spec, n):
    if hasattr(spec, "input_widths"):
        spec = spec.input_widths()
    widths = [int(w) for w in spec]
    if len(widths) != n:
        raise ValueError(f"mask has {n} features but {len(widths)} block widths were given")
    if any(w < 1 for w in widths):
        raise ValueError("block widths must be >= 1")
    return widths


def expand_mask(s: DependencyMask, schema, out_schema=None) -> DependencyMask:
    """Blow each feature up into a constant block.

    ``schema`` is a :class:`~ngm.data.FeatureSchema` or a list of block widths
    for the rows; ``out_schema`` (default: same as rows) gives column widths,
    which lets binned inputs face unsplit outputs.
    """
    rw = _widths(schema, s.shape[0])
    cw = rw if out_schema is None else _widths(out_schema, s.shape[1])
    m = np.repeat(np.repeat(s.matrix, rw, axis=0), cw, axis=1)
    rows = tuple((lab, k) for lab, w in zip(s.row_labels, rw) for k in range(w))
    cols = tuple((lab, k) for lab, w in zip(s.col_labels, cw) for k in range(w))
    return DependencyMask(m, rows, cols)


def bfs_order(g: DependencyGraph, start: str) -> list[str]:
    """Breadth-first ordering from ``start``; unreached components follow."""
    if not g.is_undirected:
        raise GraphError("bfs_order needs an undirected graph (moralize first)")
    s = g.index(start)
    adj = g.adjacency(directed=False)
    seen = np.zeros(len(g), dtype=bool)
    order = []

    def visit(root):
        q = deque([root])
        seen[root] = True
        while q:
            u = q.popleft()
            order.append(u)
            for v in np.flatnonzero(adj[u]):
                if not seen[v]:
                    seen[v] = True
                    q.append(v)

    visit(s)
    for root in range(len(g)):
        if not seen[root]:
            visit(root)
    return [g.nodes[i] for i in order]


def topological_order(g: DependencyGraph) -> list[str]:
    """Kahn's algorithm, always releasing the lowest-index ready node."""
    import heapq

    if not g.is_directed:
        raise GraphError("topological_order needs a directed graph")
    d = len(g)
    indeg = [0] * d
    succ = [[] for _ in range(d)]
    for e in g.edges:
        i, j = g.index(e.source), g.index(e.target)
        succ[i].append(j)
        indeg[j] += 1
    ready = [i for i in range(d) if indeg[i] == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        u = heapq.heappop(ready)
        out.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(ready, v)
    if len(out) != d:
        raise CycleError(_find_cycle(g) or [])
    return [g.nodes[i] for i in out]


# -- file formats ----------------------------------------------------------

def read_edge_list(path, nodes: Sequence[str] | None = None,
                   dag: bool | None = None) -> DependencyGraph:
    """Parse ``source<TAB>target<TAB>kind[<TAB>sign]`` lines.

    ``nodes`` is the feature universe (normally the dataset columns); when
    omitted, nodes are collected from the edges in order of appearance.
    Blank lines and ``#`` comments are skipped.
    """
    edges = []
    seen = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in raw.rstrip("\n").split("\t")]
        if len(parts) < 2 or len(parts) > 4:
            raise GraphError(f"{path}:{lineno}: expected 2-4 tab-separated fields")
        src, tgt = parts[0], parts[1]
        kind = parts[2] if len(parts) > 2 and parts[2] else UNDIRECTED
        sign = parts[3] if len(parts) > 3 and parts[3] else None
        try:
            edges.append(Edge(src, tgt, kind, sign))
        except GraphError as exc:
            raise GraphError(f"{path}:{lineno}: {exc}") from None
        for n in (src, tgt):
            if n not in seen:
                seen.append(n)
    universe = tuple(nodes) if nodes is not None else tuple(seen)
    if dag is None:
        dag = bool(edges) and all(e.kind == DIRECTED for e in edges)
    return DependencyGraph(universe, tuple(edges), dag=dag)


def read_adjacency_csv(path, directed: bool = False) -> DependencyGraph:
    """Square 0/1 adjacency matrix with a header row of feature names."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    # tolerate a leading row-label column
    if len(body) and len(body[0]) == len(header) + 1:
        body = [r[1:] for r in body]
    if len(body) != len(header) or any(len(r) != len(header) for r in body):
        raise GraphError(f"{path}: adjacency matrix must be square with a header row")
    a = np.array([[int(float(c)) for c in r] for r in body], dtype=np.int8)
    if not np.isin(a, (0, 1)).all():
        raise GraphError(f"{path}: adjacency entries must be 0 or 1")
    np.fill_diagonal(a, 0)
    edges = []
    d = len(header)
    for i in range(d):
        for j in range(d):
            if not a[i, j]:
                continue
            if directed:
                edges.append(Edge(header[i], header[j], DIRECTED))
            elif i < j or not a[j, i]:
                edges.append(Edge(header[min(i, j)], header[max(i, j)], UNDIRECTED))
    # an undirected reading of an asymmetric matrix can produce duplicates
    edges = list(dict.fromkeys(edges))
    return DependencyGraph(tuple(header), tuple(edges), dag=directed)


def read_graph(path, nodes: Sequence[str] | None = None) -> DependencyGraph:
    p = Path(path)
    if p.suffix.lower() == ".csv":
        g = read_adjacency_csv(p)
        if nodes is not None and set(nodes) != set(g.nodes):
            raise GraphError(f"{path}: adjacency header does not match the data columns")
        if nodes is not None:
            g = DependencyGraph(tuple(nodes), g.edges, dag=g.dag)
        return g
    return read_edge_list(p, nodes)


def write_edge_list(g: DependencyGraph, path) -> None:
    lines = []
    for e in g.edges:
        fields = [e.source, e.target, e.kind]
        if e.sign:
            fields.append(e.sign)
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
