"""Weighted graphs with polynomial volume growth.

Finite truncations of three families are generated here: hypercubic
lattices, Sierpinski-gasket graphs and Vicsek-tree graphs, all with unit
edge weights. The vertex measure is mu(x) = sum of incident edge weights,
the metric is the usual graph distance, and every generator tags the graph
with its nominal volume and walk exponents so downstream modules can pick
envelopes without re-deriving them.

Vertices whose neighbourhood differs from the infinite graph (grid faces,
gasket corners, vicsek arm tips) form the truncation boundary; the core is
everything at distance >= floor(diameter/4) from it.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import (
    BoundaryContaminationError,
    InvalidParameterError,
    ResourceLimitError,
)

MAX_VERTICES = 200_000
MAX_DENSE_VERTICES = 5_000

__all__ = [
    "WeightedGraph",
    "VolumeReport",
    "lattice_graph",
    "gasket_graph",
    "vicsek_graph",
    "build_graph",
    "gasket_vertex_count",
    "volume_profile",
]


def radius_floor(s: float) -> int:
    """Largest integer distance admitted by a real ball radius."""
    return int(math.floor(s + 1e-9))


@dataclass
class WeightedGraph:
    """Symmetric weighted graph with counting-comparable vertex measure.

    Edges are stored once per unordered pair (u < v). Instances are treated
    as immutable after construction; the distance table and boundary
    clearances are cached lazily.
    """

    n_vertices: int
    edge_u: np.ndarray
    edge_v: np.ndarray
    edge_w: np.ndarray
    mu: np.ndarray
    generator: str
    params: dict
    nominal_df: float
    nominal_dw: float
    boundary: np.ndarray

    _adj: sp.csr_matrix | None = field(default=None, repr=False, compare=False)
    _dist: np.ndarray | None = field(default=None, repr=False, compare=False)
    _bdist: np.ndarray | None = field(default=None, repr=False, compare=False)
    _diameter: int | None = field(default=None, repr=False, compare=False)

    @property
    def n_edges(self) -> int:
        return len(self.edge_u)

    def adjacency(self) -> sp.csr_matrix:
        if self._adj is None:
            u, v, w = self.edge_u, self.edge_v, self.edge_w
            rows = np.concatenate([u, v])
            cols = np.concatenate([v, u])
            vals = np.concatenate([w, w])
            self._adj = sp.csr_matrix(
                (vals, (rows, cols)), shape=(self.n_vertices, self.n_vertices)
            )
        return self._adj

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency().indptr)

    def c_mu(self) -> float:
        """Smallest C with 1/C <= mu(x) <= C for all x."""
        return float(max(self.mu.max(), 1.0 / self.mu.min()))

    def distance_matrix(self) -> np.ndarray:
        """All-pairs graph distances as int16 (dense graphs only)."""
        if self._dist is None:
            if self.n_vertices > MAX_DENSE_VERTICES:
                raise ResourceLimitError(
                    f"all-pairs distance table needs n <= {MAX_DENSE_VERTICES}, "
                    f"got {self.n_vertices}"
                )
            d = csgraph.shortest_path(self.adjacency(), method="D", unweighted=True)
            if np.isinf(d).any():
                raise InvalidParameterError("graph is not connected")
            self._dist = d.astype(np.int16)
        return self._dist

    def distances_from(self, x: int) -> np.ndarray:
        if self._dist is not None or self.n_vertices <= MAX_DENSE_VERTICES:
            return self.distance_matrix()[x].astype(np.int32)
        d = csgraph.dijkstra(self.adjacency(), unweighted=True, indices=x)
        return d.astype(np.int32)

    def distance(self, x: int, y: int) -> int:
        return int(self.distances_from(x)[y])

    def diameter(self) -> int:
        if self._diameter is None:
            self._diameter = int(self.distance_matrix().max())
        return self._diameter

    def boundary_distance(self) -> np.ndarray:
        """Per-vertex graph distance to the truncation boundary."""
        if self._bdist is None:
            if len(self.boundary) == 0:
                self._bdist = np.full(self.n_vertices, np.iinfo(np.int32).max, np.int32)
            else:
                d = csgraph.dijkstra(
                    self.adjacency(), unweighted=True, indices=self.boundary
                )
                self._bdist = d.min(axis=0).astype(np.int32)
        return self._bdist

    @property
    def core_radius(self) -> int:
        return self.diameter() // 4

    def core_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_distance() >= self.core_radius)

    def ball(self, x: int, radius: float) -> np.ndarray:
        """Vertex ids of the closed ball B(x, radius)."""
        return np.flatnonzero(self.distances_from(x) <= radius_floor(radius))

    def annulus(self, x: int, inner: float, outer: float) -> np.ndarray:
        """Vertex ids with inner < d(x, .) <= outer."""
        d = self.distances_from(x)
        return np.flatnonzero((d > radius_floor(inner)) & (d <= radius_floor(outer)))

    def volume(self, x: int, r: float) -> float:
        """mu-measure of the closed ball B(x, r)."""
        return float(self.mu[self.ball(x, r)].sum())

    # -- serialization ----------------------------------------------------

    def to_edge_text(self) -> str:
        lines = [f"{self.n_vertices} {self.n_edges}"]
        order = np.lexsort((self.edge_v, self.edge_u))
        for i in order:
            lines.append(
                f"{self.edge_u[i]} {self.edge_v[i]} {repr(float(self.edge_w[i]))}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_text(cls, text: str, **meta) -> "WeightedGraph":
        rows = [ln for ln in (ln.strip() for ln in text.splitlines()) if ln]
        if not rows:
            raise InvalidParameterError("empty edge-list text")
        try:
            n, m = (int(tok) for tok in rows[0].split())
        except ValueError as exc:
            raise InvalidParameterError(f"bad edge-list header {rows[0]!r}") from exc
        if len(rows) - 1 != m:
            raise InvalidParameterError(
                f"edge-list header promises {m} edges, found {len(rows) - 1}"
            )
        edges = []
        for ln in rows[1:]:
            tok = ln.split()
            if len(tok) != 3:
                raise InvalidParameterError(f"bad edge line {ln!r}")
            u, v, w = int(tok[0]), int(tok[1]), float(tok[2])
            if not (0 <= u < n and 0 <= v < n):
                raise InvalidParameterError(f"vertex id out of range in {ln!r}")
            if u == v:
                raise InvalidParameterError(f"self-loop not supported: {ln!r}")
            if w <= 0:
                raise InvalidParameterError(f"non-positive weight in {ln!r}")
            edges.append((min(u, v), max(u, v), w))
        return cls.from_edges(n, edges, **meta)

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges: list[tuple[int, int, float]],
        generator: str = "custom",
        params: dict | None = None,
        nominal_df: float = 1.0,
        nominal_dw: float = 2.0,
        boundary: np.ndarray | None = None,
    ) -> "WeightedGraph":
        if n < 1 or n > MAX_VERTICES:
            raise ResourceLimitError(f"vertex count {n} outside [1, {MAX_VERTICES}]")
        eu = np.array([e[0] for e in edges], dtype=np.int64)
        ev = np.array([e[1] for e in edges], dtype=np.int64)
        ew = np.array([e[2] for e in edges], dtype=np.float64)
        mu = np.zeros(n)
        np.add.at(mu, eu, ew)
        np.add.at(mu, ev, ew)
        if (mu <= 0).any():
            raise InvalidParameterError("isolated vertex: mu(x) = 0 somewhere")
        return cls(
            n_vertices=n,
            edge_u=eu,
            edge_v=ev,
            edge_w=ew,
            mu=mu,
            generator=generator,
            params=params or {},
            nominal_df=nominal_df,
            nominal_dw=nominal_dw,
            boundary=np.array([], np.int64) if boundary is None else np.asarray(boundary),
        )

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_edge_text().encode()).hexdigest()[:16]


def gasket_vertex_count(level: int) -> int:
    """Vertex count of the level-k gasket graph, 3(3^k + 1)/2."""
    return 3 * (3**level + 1) // 2


def lattice_graph(dimension: int, side: int) -> WeightedGraph:
    """Box of Z^dimension with `side` vertices per axis, unit weights."""
    if dimension < 1 or side < 2:
        raise InvalidParameterError("lattice needs dimension >= 1 and side >= 2")
    n = side**dimension
    if n > MAX_VERTICES:
        raise ResourceLimitError(f"lattice would have {n} > {MAX_VERTICES} vertices")
    idx = np.arange(n)
    coords = np.stack(
        [(idx // side**a) % side for a in range(dimension - 1, -1, -1)], axis=1
    )
    edges = []
    for a in range(dimension):
        step = side ** (dimension - 1 - a)
        keep = coords[:, a] < side - 1
        for u in idx[keep]:
            edges.append((int(u), int(u + step), 1.0))
    on_face = (coords == 0).any(axis=1) | (coords == side - 1).any(axis=1)
    return WeightedGraph.from_edges(
        n,
        edges,
        generator="lattice",
        params={"dimension": dimension, "side": side},
        nominal_df=float(dimension),
        nominal_dw=2.0,
        boundary=idx[on_face],
    )


def gasket_graph(level: int) -> WeightedGraph:
    """Level-k Sierpinski gasket graph in skew integer coordinates.

    The big triangle has corners (0,0), (2^k,0), (0,2^k); each subdivision
    halves the side, leaving 3^k unit triangles whose corners are the
    vertices and whose sides are the (unit-weight) edges.
    """
    if level < 0:
        raise InvalidParameterError("gasket level must be >= 0")
    if gasket_vertex_count(level) > MAX_VERTICES:
        raise ResourceLimitError(f"gasket level {level} too large")
    side = 2**level
    triangles = [(0, 0, side)]
    for _ in range(level):
        nxt = []
        for (x, y, s) in triangles:
            h = s // 2
            nxt += [(x, y, h), (x + h, y, h), (x, y + h, h)]
        triangles = nxt
    verts: set[tuple[int, int]] = set()
    edge_set: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    for (x, y, _s) in triangles:
        a, b, c = (x, y), (x + 1, y), (x, y + 1)
        verts.update((a, b, c))
        for p, q in ((a, b), (a, c), (b, c)):
            edge_set.add((p, q) if p < q else (q, p))
    order = sorted(verts)
    index = {p: i for i, p in enumerate(order)}
    edges = [(index[p], index[q], 1.0) for p, q in sorted(edge_set)]
    corners = [(0, 0), (side, 0), (0, side)]
    return WeightedGraph.from_edges(
        len(order),
        edges,
        generator="gasket",
        params={"level": level},
        nominal_df=math.log(3) / math.log(2),
        nominal_dw=math.log(5) / math.log(2),
        boundary=np.array(sorted(index[c] for c in corners)),
    )


def vicsek_graph(level: int) -> WeightedGraph:
    """Level-k Vicsek tree: 5 copies of level k-1 glued in a plus shape.

    Cells live on the 3^k x 3^k grid; level 1 is the 5-cell cross with the
    centre adjacent to all four arms. The cell-adjacency graph is a tree
    with 5^k vertices.
    """
    if level < 1:
        raise InvalidParameterError("vicsek level must be >= 1")
    if 5**level > MAX_VERTICES:
        raise ResourceLimitError(f"vicsek level {level} too large")
    offsets = [(1, 1), (0, 1), (2, 1), (1, 0), (1, 2)]
    cells = [(0, 0)]
    for _ in range(level):
        cells = [(3 * cx + dx, 3 * cy + dy) for (cx, cy) in cells for (dx, dy) in offsets]
    order = sorted(set(cells))
    index = {p: i for i, p in enumerate(order)}
    edges = []
    for (x, y) in order:
        for (nx, ny) in ((x + 1, y), (x, y + 1)):
            j = index.get((nx, ny))
            if j is not None:
                edges.append((index[(x, y)], j, 1.0))
    span, mid = 3**level - 1, (3**level - 1) // 2
    tips = [(0, mid), (span, mid), (mid, 0), (mid, span)]
    return WeightedGraph.from_edges(
        len(order),
        edges,
        generator="vicsek",
        params={"level": level},
        nominal_df=math.log(5) / math.log(3),
        nominal_dw=math.log(15) / math.log(3),
        boundary=np.array(sorted(index[t] for t in tips)),
    )


def build_graph(generator: str, **params) -> WeightedGraph:
    if generator == "lattice":
        return lattice_graph(int(params["dimension"]), int(params["side"]))
    if generator == "gasket":
        return gasket_graph(int(params["level"]))
    if generator == "vicsek":
        return vicsek_graph(int(params["level"]))
    raise InvalidParameterError(f"unknown generator {generator!r}")


@dataclass
class VolumeReport:
    generator: str
    rows: list[tuple[int, int, float]]  # (center, r, V(center, r))
    df_hat: float
    cv_hat: float
    nominal_df: float


def volume_profile(
    g: WeightedGraph, centers: np.ndarray | list[int], r_max: int
) -> VolumeReport:
    """Exact ball volumes V(x, r) for r = 0..r_max plus a log-log growth fit.

    Centers must lie in the core and r_max must not exceed the core radius,
    so no ball feels the truncation boundary.
    """
    centers = np.asarray(centers, dtype=np.int64)
    if r_max < 1:
        raise InvalidParameterError("r_max must be >= 1")
    if r_max > g.core_radius:
        raise BoundaryContaminationError(
            f"r_max {r_max} exceeds core radius {g.core_radius}"
        )
    core = set(g.core_vertices().tolist())
    bad = [int(c) for c in centers if int(c) not in core]
    if bad:
        raise BoundaryContaminationError(f"centers not in core: {bad}")

    rows: list[tuple[int, int, float]] = []
    logs: list[tuple[float, float]] = []
    for c in centers:
        d = g.distances_from(int(c))
        for r in range(r_max + 1):
            vol = float(g.mu[d <= r].sum())
            rows.append((int(c), r, vol))
            if r >= 2:
                logs.append((math.log(r), math.log(vol)))
    lx = np.array([p[0] for p in logs])
    ly = np.array([p[1] for p in logs])
    slope, _ = np.polyfit(lx, ly, 1)
    ratios = [
        max(vol / r**g.nominal_df, r**g.nominal_df / vol)
        for (_c, r, vol) in rows
        if r >= 1
    ]
    return VolumeReport(
        generator=g.generator,
        rows=rows,
        df_hat=float(slope),
        cv_hat=float(max(ratios)),
        nominal_df=g.nominal_df,
    )
