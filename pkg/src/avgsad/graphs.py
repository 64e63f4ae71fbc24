"""Finite and lazily generated infinite graphs.

Vertices are plain integers.  Finite graphs keep explicit adjacency; lazy
graphs (the lattice Z^d and regular trees) compute neighbourhoods on demand
from a canonical integer encoding, so profiles over them stay sparse.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels as K
from .errors import SpecError, ValidationError


class Graph:
    """Common interface; see :class:`FiniteGraph`, :class:`Lattice`, :class:`RegularTree`."""

    degree_bound: int
    is_finite: bool = False

    def neighbors(self, v: int) -> list[int]:
        raise NotImplementedError

    def kernel_spec(self):
        """(kind, p0, p1, ids, indptr, indices) as consumed by the numba kernels."""
        raise NotImplementedError

    def parse_vertex(self, token: str) -> int:
        return int(token)

    def label(self, v: int) -> str:
        return str(v)

    def distance(self, u: int, v: int, cap: int | None = None) -> int | None:
        return bfs_distance(self, u, v, cap)

    def distances_from(self, root: int, targets: Iterable[int]) -> dict[int, int]:
        targets = set(targets)
        if not targets:
            return {}
        if self.is_finite:
            dist = bfs_all(self, root)
            return {v: dist[v] for v in targets}
        return {v: self.distance(root, v) for v in targets}


_EMPTY = np.zeros(0, dtype=np.int64)


class FiniteGraph(Graph):
    is_finite = True

    def __init__(self, adjacency: Mapping[int, Sequence[int]],
                 labels: Mapping[str, int] | None = None, name: str = "finite"):
        ids = np.array(sorted(adjacency), dtype=np.int64)
        if ids.size == 0:
            raise ValidationError("graph has no vertices")
        pos = {int(v): i for i, v in enumerate(ids)}
        indptr = [0]
        indices: list[int] = []
        for v in ids:
            nbrs = list(adjacency[int(v)])
            if int(v) in nbrs:
                raise ValidationError(f"self-loop at vertex {int(v)}")
            if len(set(nbrs)) != len(nbrs):
                raise ValidationError(f"repeated edge at vertex {int(v)}")
            for w in nbrs:
                if w not in pos:
                    raise ValidationError(f"edge to unknown vertex {w}")
                if int(v) not in adjacency[w]:
                    raise ValidationError(f"asymmetric adjacency: {int(v)}->{w} without {w}->{int(v)}")
                indices.append(pos[w])
            indptr.append(len(indices))
        self.ids = ids
        self.indptr = np.array(indptr, dtype=np.int64)
        self.indices = np.array(indices, dtype=np.int64)
        self._pos = pos
        self.labels = dict(labels or {})
        self._names = {v: k for k, v in self.labels.items()}
        self.name = name
        degrees = np.diff(self.indptr)
        self.degree_bound = int(degrees.max()) if degrees.size else 0
        seen = bfs_all(self, int(ids[0]))
        if len(seen) != len(ids):
            raise ValidationError("disconnected")

    @property
    def vertices(self) -> list[int]:
        return [int(v) for v in self.ids]

    @property
    def n_vertices(self) -> int:
        return int(self.ids.size)

    def __contains__(self, v) -> bool:
        return v in self._pos

    def neighbors(self, v: int) -> list[int]:
        i = self._pos[v]
        return [int(self.ids[j]) for j in self.indices[self.indptr[i]:self.indptr[i + 1]]]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Endpoints (a < b) of every edge, in CSR order."""
        rows = np.repeat(self.ids, np.diff(self.indptr))
        cols = self.ids[self.indices]
        keep = rows < cols
        return rows[keep], cols[keep]

    def edges(self) -> list[tuple[int, int]]:
        a, b = self.edge_arrays()
        return list(zip(a.tolist(), b.tolist()))

    @property
    def n_edges(self) -> int:
        return int(self.indices.size // 2)

    def index(self, v: int) -> int:
        return self._pos[v]

    def kernel_spec(self):
        return K.KIND_FINITE, 0, 0, self.ids, self.indptr, self.indices

    def parse_vertex(self, token: str) -> int:
        token = token.strip()
        if token in self.labels:
            return self.labels[token]
        try:
            v = int(token)
        except ValueError:
            raise SpecError(f"unknown vertex {token!r}") from None
        if v not in self._pos:
            raise SpecError(f"unknown vertex {token!r}")
        return v

    def label(self, v: int) -> str:
        return self._names.get(v, str(v))

    def __repr__(self) -> str:
        return f"FiniteGraph({self.name}, n={self.n_vertices}, m={self.n_edges})"


def build_finite(adjacency: Sequence[Sequence[int]], name: str = "finite") -> FiniteGraph:
    """Graph on vertices 0..n-1 from a list of neighbour lists."""
    return FiniteGraph({i: list(nb) for i, nb in enumerate(adjacency)}, name=name)


def from_edges(n_or_vertices, edges: Iterable[tuple[int, int]], labels=None, name="finite") -> FiniteGraph:
    vertices = range(n_or_vertices) if isinstance(n_or_vertices, int) else n_or_vertices
    adj: dict[int, list[int]] = {int(v): [] for v in vertices}
    for u, v in edges:
        if u == v:
            raise ValidationError(f"self-loop at vertex {u}")
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    return FiniteGraph(adj, labels=labels, name=name)


def load_edge_list(path: str | Path) -> FiniteGraph:
    """Read ``u v`` pairs, one per line; ``#`` starts a comment.

    Integer tokens are used as vertex ids; otherwise tokens are labels mapped
    to 0, 1, ... in order of first appearance.
    """
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValidationError(f"{path}:{lineno}: expected 'u v', got {line!r}")
        pairs.append((parts[0], parts[1]))
    tokens = [t for p in pairs for t in p]
    if all(re.fullmatch(r"-?\d+", t) for t in tokens):
        edges = [(int(a), int(b)) for a, b in pairs]
        vertices = sorted({v for e in edges for v in e})
        return from_edges(vertices, _dedupe(edges), name=str(path))
    labels: dict[str, int] = {}
    for t in tokens:
        labels.setdefault(t, len(labels))
    edges = [(labels[a], labels[b]) for a, b in pairs]
    return from_edges(len(labels), _dedupe(edges), labels=labels, name=str(path))


def _dedupe(edges):
    seen = set()
    out = []
    for u, v in edges:
        key = (min(u, v), max(u, v))
        if key in seen:
            raise ValidationError(f"repeated edge {u} {v}")
        seen.add(key)
        out.append((u, v))
    return out


# ---------------------------------------------------------------------------
# lazy graphs


@dataclass(frozen=True)
class Lattice(Graph):
    """Z^d with nearest-neighbour edges; coordinates packed into one int64."""

    d: int = 2
    bits: int = field(init=False)

    def __post_init__(self):
        if not 1 <= self.d <= 6:
            raise ValidationError(f"lattice dimension must be in 1..6, got {self.d}")
        object.__setattr__(self, "bits", 62 // self.d)

    @property
    def degree_bound(self) -> int:
        return 2 * self.d

    def vertex(self, coords: Sequence[int]) -> int:
        if len(coords) != self.d:
            raise ValidationError(f"expected {self.d} coordinates, got {len(coords)}")
        off = 1 << (self.bits - 1)
        v = 0
        for k, x in enumerate(coords):
            if not -off < x < off - 1:
                raise ValidationError(f"coordinate {x} outside the packable range")
            v |= (x + off) << (k * self.bits)
        return v

    def coords(self, v: int) -> tuple[int, ...]:
        mask = (1 << self.bits) - 1
        off = 1 << (self.bits - 1)
        return tuple(((v >> (k * self.bits)) & mask) - off for k in range(self.d))

    @property
    def origin(self) -> int:
        return self.vertex((0,) * self.d)

    def neighbors(self, v: int) -> list[int]:
        out = []
        for k in range(self.d):
            step = 1 << (k * self.bits)
            out += [v + step, v - step]
        return out

    def distance(self, u: int, v: int, cap: int | None = None) -> int | None:
        d = sum(abs(a - b) for a, b in zip(self.coords(u), self.coords(v)))
        return None if cap is not None and d > cap else d

    def kernel_spec(self):
        return K.KIND_LATTICE, self.d, self.bits, _EMPTY, _EMPTY, _EMPTY

    def parse_vertex(self, token: str) -> int:
        try:
            coords = [int(x) for x in token.split(",")]
        except ValueError:
            raise SpecError(f"bad lattice point {token!r}") from None
        return self.vertex(coords)

    def label(self, v: int) -> str:
        return ",".join(map(str, self.coords(v)))

    def ball(self, center: int, radius: int) -> FiniteGraph:
        """The finite induced subgraph on the L1 ball, with the same vertex ids."""
        verts = bfs_all(self, center, radius)
        adj = {v: [w for w in self.neighbors(v) if w in verts] for v in verts}
        return FiniteGraph(adj, name=f"ball(Z^{self.d}, r={radius})")


@dataclass(frozen=True)
class RegularTree(Graph):
    """Tree where every non-root vertex has ``b`` children.

    With ``regular=False`` the root has ``b`` children (root degree b, all
    others b + 1); with ``regular=True`` the root has b + 1 children and the
    tree is (b + 1)-regular.  Vertices are heap-style indices, root 0.
    """

    b: int = 2
    regular: bool = False

    def __post_init__(self):
        if self.b < 1:
            raise ValidationError(f"branching must be >= 1, got {self.b}")

    @property
    def degree_bound(self) -> int:
        return self.b + 1

    root = 0

    def parent(self, v: int) -> int | None:
        if v == 0:
            return None
        if self.regular:
            return 0 if v <= self.b + 1 else (v - 2) // self.b
        return (v - 1) // self.b

    def children(self, v: int) -> list[int]:
        b = self.b
        if self.regular:
            if v == 0:
                return list(range(1, b + 2))
            return [b * v + 2 + j for j in range(b)]
        return [b * v + 1 + j for j in range(b)]

    def neighbors(self, v: int) -> list[int]:
        p = self.parent(v)
        return ([] if p is None else [p]) + self.children(v)

    def depth(self, v: int) -> int:
        d = 0
        while v != 0:
            v = self.parent(v)
            d += 1
        return d

    def distance(self, u: int, v: int, cap: int | None = None) -> int | None:
        du, dv = self.depth(u), self.depth(v)
        d = 0
        while du > dv:
            u, du, d = self.parent(u), du - 1, d + 1
        while dv > du:
            v, dv, d = self.parent(v), dv - 1, d + 1
        while u != v:
            u, v, d = self.parent(u), self.parent(v), d + 2
        return None if cap is not None and d > cap else d

    def kernel_spec(self):
        return K.KIND_TREE, self.b, int(self.regular), _EMPTY, _EMPTY, _EMPTY

    def ball(self, center: int, radius: int) -> FiniteGraph:
        verts = bfs_all(self, center, radius)
        adj = {v: [w for w in self.neighbors(v) if w in verts] for v in verts}
        return FiniteGraph(adj, name=f"ball(tree b={self.b}, r={radius})")


# ---------------------------------------------------------------------------
# breadth-first search


def bfs_all(g: Graph, root: int, radius: int | None = None) -> dict[int, int]:
    dist = {root: 0}
    queue = deque([root])
    while queue:
        x = queue.popleft()
        if radius is not None and dist[x] >= radius:
            continue
        for y in g.neighbors(x):
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    return dist


def bfs_distance(g: Graph, u: int, v: int, cap: int | None = None) -> int | None:
    """Shortest-path length; ``None`` signals that it exceeds ``cap``.

    Lazy graphs without a closed form need a cap, otherwise the search may
    not terminate for far-apart vertices.
    """
    if u == v:
        return 0
    if not g.is_finite and cap is None:
        raise ValidationError("distance on a lazy graph needs a radius cap")
    dist = {u: 0}
    queue = deque([u])
    while queue:
        x = queue.popleft()
        if cap is not None and dist[x] >= cap:
            continue
        for y in g.neighbors(x):
            if y not in dist:
                dist[y] = dist[x] + 1
                if y == v:
                    return dist[y]
                queue.append(y)
    if g.is_finite and cap is None:
        raise ValidationError(f"vertices {u} and {v} are not connected")
    return None


def distance(g: Graph, u: int, v: int, cap: int | None = None) -> int | None:
    return g.distance(u, v, cap)


# ---------------------------------------------------------------------------
# generators


def path(n: int) -> FiniteGraph:
    _need(n >= 1, f"path needs n >= 1, got {n}")
    return from_edges(n, [(i, i + 1) for i in range(n - 1)], name=f"path:n={n}")


def cycle(n: int) -> FiniteGraph:
    _need(n >= 3, f"cycle needs n >= 3, got {n}")
    return from_edges(n, [(i, (i + 1) % n) for i in range(n)], name=f"cycle:n={n}")


def complete(n: int) -> FiniteGraph:
    _need(n >= 1, f"complete graph needs n >= 1, got {n}")
    return from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)], name=f"complete:n={n}")


def star(n: int) -> FiniteGraph:
    """Centre 0 joined to leaves 1..n-1; labels ``center`` and ``leaf0``, ``leaf1``, ..."""
    _need(n >= 2, f"star needs n >= 2, got {n}")
    labels = {"center": 0, **{f"leaf{i}": i + 1 for i in range(n - 1)}}
    return from_edges(n, [(0, i) for i in range(1, n)], labels=labels, name=f"star:n={n}")


def torus(d: int, side: int) -> FiniteGraph:
    _need(d >= 1, f"torus needs d >= 1, got {d}")
    _need(side >= 3, f"torus needs side >= 3, got {side}")
    n = side ** d
    edges = []
    for v in range(n):
        c = np.unravel_index(v, (side,) * d)
        for k in range(d):
            w = list(c)
            w[k] = (w[k] + 1) % side
            edges.append((v, int(np.ravel_multi_index(w, (side,) * d))))
    return from_edges(n, edges, name=f"torus:d={d},side={side}")


def random_regular(n: int, d: int, seed: int = 0) -> FiniteGraph:
    import networkx as nx

    _need(n >= 1 and d >= 1, f"random regular needs n, d >= 1, got n={n}, d={d}")
    _need(d < n, f"random regular needs d < n, got n={n}, d={d}")
    _need((n * d) % 2 == 0, f"random regular needs n*d even, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    for _ in range(100):
        h = nx.random_regular_graph(d, n, seed=int(rng.integers(2**32)))
        if nx.is_connected(h):
            return from_edges(n, list(h.edges()), name=f"random-regular:n={n},d={d},seed={seed}")
    raise ValidationError(f"no connected {d}-regular graph on {n} vertices found")


def _need(cond: bool, msg: str):
    if not cond:
        raise ValidationError(msg)


_GRAPH_SPEC = re.compile(r"^([a-z-]+)(?::(.*))?$")


def parse_kv(body: str | None) -> dict[str, str]:
    out: dict[str, str] = {}
    if not body:
        return out
    for item in body.split(","):
        if "=" not in item:
            raise SpecError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_graph(spec: str) -> Graph:
    """Build a graph from ``kind:key=val,...`` (e.g. ``lattice:d=2``, ``tree:b=3``)."""
    m = _GRAPH_SPEC.match(spec.strip())
    if not m:
        raise SpecError(f"bad graph spec {spec!r}")
    kind, body = m.groups()
    if kind == "file":
        if not body:
            raise SpecError("file graph needs a path: file:edges.txt")
        return load_edge_list(body.removeprefix("path="))
    kv = parse_kv(body)

    def get(name, default=None):
        if name in kv:
            try:
                return int(kv.pop(name))
            except ValueError:
                raise SpecError(f"{kind}: {name} must be an integer") from None
        if default is None:
            raise SpecError(f"{kind}: missing parameter {name}")
        return default

    builders = {
        "path": lambda: path(get("n")),
        "cycle": lambda: cycle(get("n")),
        "complete": lambda: complete(get("n")),
        "star": lambda: star(get("n")),
        "torus": lambda: torus(get("d", 2), get("side")),
        "random-regular": lambda: random_regular(get("n"), get("d"), get("seed", 0)),
        "lattice": lambda: Lattice(get("d", 2)),
        "tree": lambda: RegularTree(get("b", 2), bool(get("regular", 0))),
    }
    if kind not in builders:
        raise SpecError(f"unknown graph kind {kind!r}")
    g = builders[kind]()
    if kv:
        raise SpecError(f"{kind}: unexpected parameter(s) {', '.join(kv)}")
    return g


def graph_name(g: Graph) -> str:
    if isinstance(g, Lattice):
        return f"lattice:d={g.d}"
    if isinstance(g, RegularTree):
        return f"tree:b={g.b}" + (",regular=1" if g.regular else "")
    return g.name


__all__ = [
    "Graph", "FiniteGraph", "Lattice", "RegularTree", "build_finite", "from_edges",
    "load_edge_list", "path", "cycle", "complete", "star", "torus", "random_regular",
    "parse_graph", "graph_name", "distance", "bfs_all", "bfs_distance",
]
