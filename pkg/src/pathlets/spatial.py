"""Spatial domains (road-network graphs and grids) and trajectory vectorization.

A domain is the universe of spatial units -- directed road edges or grid
cells -- indexed by dense integers [0, num_units). Trajectories are ordered
unit sequences; their binary-vector form marks which units are visited.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DomainError

GRID_SPEC_RE = re.compile(r"^\s*grid:\s*rows\s*=\s*(\d+)\s+cols\s*=\s*(\d+)\s*$")


@dataclass(frozen=True)
class SpatialDomain:
    """Immutable universe of spatial units with a one-step adjacency relation.

    kind is "grid" (8-neighborhood cells, row-major ids) or "graph"
    (directed edges; edge b follows edge a iff head(a) == tail(b)).
    """

    kind: str
    num_units: int
    adjacency: tuple  # tuple of sorted tuples of unit ids, index = unit id
    rows: Optional[int] = None
    cols: Optional[int] = None
    edge_list: Optional[tuple] = None  # (edge_id, tail, head) triples for graphs

    def __post_init__(self):
        if self.num_units < 1:
            raise DomainError("domain must contain at least one unit")
        if len(self.adjacency) != self.num_units:
            raise DomainError("adjacency table size does not match unit count")

    def validate_unit(self, u: int) -> int:
        u = int(u)
        if not 0 <= u < self.num_units:
            raise DomainError(f"unit {u} outside [0, {self.num_units})")
        return u

    def spec_text(self) -> str:
        """Serialize the domain back to its on-disk spec form."""
        if self.kind == "grid":
            return f"grid: rows={self.rows} cols={self.cols}\n"
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["edge_id", "tail_vertex", "head_vertex"])
        for edge_id, tail, head in self.edge_list:
            writer.writerow([edge_id, tail, head])
        return buf.getvalue()


@dataclass
class Trajectory:
    """Ordered visit sequence over domain units, with optional departure time.

    Repeated visits are allowed; adjacency violations are flagged by
    is_connected(), not rejected.
    """

    units: tuple = field(default_factory=tuple)
    timestamp: Optional[float] = None

    def __post_init__(self):
        self.units = tuple(int(u) for u in self.units)
        if not self.units:
            raise DomainError("trajectory must be non-empty")

    def __len__(self) -> int:
        return len(self.units)

    def unit_set(self) -> frozenset:
        return frozenset(self.units)

    def is_connected(self, dom: SpatialDomain) -> bool:
        for a, b in zip(self.units, self.units[1:]):
            if b not in dom.adjacency[a] and a != b:
                return False
        return True


def make_grid_domain(grid_rows: int, grid_cols: int) -> SpatialDomain:
    """Grid domain with 8-neighborhood adjacency, cells in row-major order."""
    if grid_rows < 1 or grid_cols < 1:
        raise DomainError("grid must have at least one row and one column")
    n = grid_rows * grid_cols
    adjacency = []
    for u in range(n):
        r, c = divmod(u, grid_cols)
        nbrs = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                rr, cc = r + dr, c + dc
                if 0 <= rr < grid_rows and 0 <= cc < grid_cols:
                    nbrs.append(rr * grid_cols + cc)
        adjacency.append(tuple(sorted(nbrs)))
    return SpatialDomain(
        kind="grid",
        num_units=n,
        adjacency=tuple(adjacency),
        rows=grid_rows,
        cols=grid_cols,
    )


def make_graph_domain(edges: Iterable[tuple]) -> SpatialDomain:
    """Graph domain from (edge_id, tail_vertex, head_vertex) triples.

    Edge ids must be the dense integers [0, |E|). Edge b is adjacent to
    edge a iff head(a) == tail(b) and a != b.
    """
    triples = [(int(e), str(t), str(h)) for e, t, h in edges]
    if not triples:
        raise DomainError("graph edge list is empty")
    ids = [e for e, _, _ in triples]
    if len(set(ids)) != len(ids):
        raise DomainError("duplicate edge ids in edge list")
    n = len(triples)
    if sorted(ids) != list(range(n)):
        raise DomainError(f"edge ids must be dense integers [0, {n})")
    tail = {}
    head = {}
    for e, t, h in triples:
        tail[e] = t
        head[e] = h
    by_tail = {}
    for e in ids:
        by_tail.setdefault(tail[e], []).append(e)
    adjacency = []
    for u in range(n):
        nbrs = [v for v in by_tail.get(head[u], []) if v != u]
        adjacency.append(tuple(sorted(nbrs)))
    ordered = sorted(triples)
    return SpatialDomain(
        kind="graph", num_units=n, adjacency=tuple(adjacency), edge_list=tuple(ordered)
    )


def load_domain(spec: str) -> SpatialDomain:
    """Parse a domain description.

    Accepts either the grid form ``grid: rows=R cols=C`` or a CSV edge list
    with header ``edge_id,tail_vertex,head_vertex``.
    """
    m = GRID_SPEC_RE.match(spec.strip().splitlines()[0]) if spec.strip() else None
    if m:
        return make_grid_domain(int(m.group(1)), int(m.group(2)))
    reader = csv.reader(io.StringIO(spec))
    try:
        header = next(reader)
    except StopIteration:
        raise DomainError("empty domain spec")
    if [h.strip() for h in header] != ["edge_id", "tail_vertex", "head_vertex"]:
        raise DomainError(
            "domain spec is neither 'grid: rows=R cols=C' nor a CSV edge list "
            "with header edge_id,tail_vertex,head_vertex"
        )
    rows = []
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise DomainError(f"malformed edge row: {row!r}")
        try:
            rows.append((int(row[0]), row[1].strip(), row[2].strip()))
        except ValueError:
            raise DomainError(f"non-integer edge id in row: {row!r}")
    return make_graph_domain(rows)


def vectorize(t: Trajectory, dom: SpatialDomain) -> np.ndarray:
    """Binary visit-indicator vector of length num_units (repeats collapse)."""
    x = np.zeros(dom.num_units, dtype=np.float64)
    for u in t.units:
        x[dom.validate_unit(u)] = 1.0
    return x


def vectorize_units(units: Sequence[int], dom: SpatialDomain) -> np.ndarray:
    """Like vectorize() but for a bare unit sequence."""
    x = np.zeros(dom.num_units, dtype=np.float64)
    for u in units:
        x[dom.validate_unit(u)] = 1.0
    return x


def neighbors(u: int, dom: SpatialDomain) -> tuple:
    """One-step successors of unit u, sorted by unit id."""
    return dom.adjacency[dom.validate_unit(u)]
