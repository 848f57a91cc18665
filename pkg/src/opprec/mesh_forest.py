"""Conforming triangle meshes refined by newest-vertex bisection.

The mesh is kept as a binary forest: the roots are the initial triangles,
the leaves form the current partition.  Each triangle stores its vertices in
the local order ``(v0, v1, v2)`` where ``(v0, v1)`` is the refinement edge
and ``v2`` is the newest vertex.  Bisecting ``(v0, v1, v2)`` at the midpoint
``m`` of ``(v0, v1)`` produces the children ``(v2, v0, m)`` and
``(v1, v2, m)``, so the newest vertex of either child is ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ClosureDepthExceeded,
    DegenerateTriangle,
    MatchingViolation,
    NonConforming,
    NotALeaf,
)

__all__ = [
    "Vertex",
    "TriNode",
    "MeshForest",
    "build_initial",
    "check_matching",
    "serialize_leaves",
    "parse_mesh",
]


def _edge(a, b):
    """Normalized (unordered) edge key."""
    return (a, b) if a < b else (b, a)


@dataclass(slots=True)
class Vertex:
    id: int
    coords: np.ndarray
    gen: int
    on_gamma: bool


@dataclass(slots=True)
class TriNode:
    vertex_ids: tuple[int, int, int]
    gen: int
    chart_id: int
    area: float
    parent: int | None = None
    children: tuple[int, int] | None = None

    @property
    def refinement_edge(self):
        return (self.vertex_ids[0], self.vertex_ids[1])

    def edges(self):
        v0, v1, v2 = self.vertex_ids
        return (_edge(v0, v1), _edge(v1, v2), _edge(v2, v0))


def _triangle_area(p0, p1, p2):
    return 0.5 * float(np.linalg.norm(np.cross(p1 - p0, p2 - p0)))


@dataclass
class MeshForest:
    """Binary forest of triangles under newest-vertex bisection."""

    vertices: list[Vertex] = field(default_factory=list)
    nodes: list[TriNode] = field(default_factory=list)
    roots: list[int] = field(default_factory=list)
    gamma_faces: set[tuple[int, int]] = field(default_factory=set)

    _leaf_set: set[int] = field(default_factory=set)
    # midpoint vertex created on an edge, shared by all bisections of it
    _edge_midpoint: dict[tuple[int, int], int] = field(default_factory=dict)
    # current leaves incident to each leaf edge (1 on the boundary, else 2)
    _edge_leaves: dict[tuple[int, int], list[int]] = field(default_factory=dict)
    # edges lying on (a refinement of) an initial gamma edge
    _gamma_subedges: set[tuple[int, int]] = field(default_factory=set)

    # -- basic queries ----------------------------------------------------

    @property
    def leaves(self) -> list[int]:
        """Node ids of the current partition, in deterministic order."""
        return sorted(self._leaf_set)

    def is_leaf(self, node_id) -> bool:
        return node_id in self._leaf_set

    def num_leaves(self) -> int:
        return len(self._leaf_set)

    def coords_array(self) -> np.ndarray:
        return np.array([v.coords for v in self.vertices])

    def boundary_edges(self):
        """Leaf edges with a single incident leaf (empty for closed surfaces)."""
        return [e for e, tl in self._edge_leaves.items() if len(tl) == 1]

    def max_generation(self) -> int:
        return max(self.nodes[t].gen for t in self._leaf_set)

    def min_leaf_area(self) -> float:
        return min(self.nodes[t].area for t in self._leaf_set)

    def edge_is_gamma(self, a, b) -> bool:
        return _edge(a, b) in self._gamma_subedges

    def vertex_generation(self, vertex_id) -> int:
        """Minimum generation over all forest nodes containing the vertex.

        Brute-force scan; the stored ``Vertex.gen`` agrees with this under
        the matching condition and is what the fast paths use.
        """
        gens = [n.gen for n in self.nodes if vertex_id in n.vertex_ids]
        if not gens:
            raise ValueError(f"vertex {vertex_id} not contained in any node")
        return min(gens)

    def leaf_neighbor(self, node_id, edge):
        """The other leaf sharing ``edge``, or None on the boundary."""
        for t in self._edge_leaves.get(_edge(*edge), ()):
            if t != node_id:
                return t
        return None

    # -- refinement -------------------------------------------------------

    def _new_vertex(self, coords, gen, on_gamma):
        vid = len(self.vertices)
        self.vertices.append(Vertex(vid, np.asarray(coords, float), gen, on_gamma))
        return vid

    def _midpoint_vertex(self, a, b, gen):
        key = _edge(a, b)
        vid = self._edge_midpoint.get(key)
        if vid is not None:
            return vid
        coords = 0.5 * (self.vertices[a].coords + self.vertices[b].coords)
        on_gamma = key in self._gamma_subedges
        vid = self._new_vertex(coords, gen, on_gamma)
        self._edge_midpoint[key] = vid
        if on_gamma:
            self._gamma_subedges.add(_edge(a, vid))
            self._gamma_subedges.add(_edge(vid, b))
        return vid

    def _register_leaf(self, node_id):
        self._leaf_set.add(node_id)
        for e in self.nodes[node_id].edges():
            self._edge_leaves.setdefault(e, []).append(node_id)

    def _unregister_leaf(self, node_id):
        self._leaf_set.discard(node_id)
        for e in self.nodes[node_id].edges():
            incident = self._edge_leaves.get(e)
            if incident is not None:
                try:
                    incident.remove(node_id)
                except ValueError:
                    pass
                if not incident:
                    del self._edge_leaves[e]

    def bisect(self, node_id) -> tuple[int, int]:
        """Bisect a leaf, returning the two child node ids."""
        if node_id not in self._leaf_set:
            raise NotALeaf(f"node {node_id} is not a leaf")
        node = self.nodes[node_id]
        v0, v1, v2 = node.vertex_ids
        m = self._midpoint_vertex(v0, v1, node.gen + 1)
        self._unregister_leaf(node_id)
        half = 0.5 * node.area
        ca = len(self.nodes)
        self.nodes.append(TriNode((v2, v0, m), node.gen + 1, node.chart_id, half, node_id))
        cb = len(self.nodes)
        self.nodes.append(TriNode((v1, v2, m), node.gen + 1, node.chart_id, half, node_id))
        node.children = (ca, cb)
        self._register_leaf(ca)
        self._register_leaf(cb)
        return ca, cb

    def refine_conforming(self, marked) -> list[int]:
        """Bisect every marked leaf plus the recursive conforming closure."""
        depth_limit = max(len(self._leaf_set), 64)

        def ensure_bisected(t, depth):
            if depth > depth_limit:
                raise ClosureDepthExceeded(
                    "conforming closure recursion exceeded the leaf count; "
                    "the initial mesh likely violates the matching condition"
                )
            while True:
                ref = self.nodes[t].refinement_edge
                nb = self.leaf_neighbor(t, ref)
                if nb is None or _edge(*self.nodes[nb].refinement_edge) == _edge(*ref):
                    break
                ensure_bisected(nb, depth + 1)
            self.bisect(t)
            if nb is not None:
                self.bisect(nb)

        for t in sorted(set(marked)):
            if t not in self._leaf_set:
                raise ValueError(f"marked node {t} is not a leaf")
        for t in sorted(set(marked)):
            if t in self._leaf_set:  # may have been consumed by closure
                ensure_bisected(t, 0)
        return self.leaves


def check_matching(forest: MeshForest) -> bool:
    """Whether every interior edge is the refinement edge of both or of
    neither incident triangle (initial meshes only)."""
    if any(n.parent is not None for n in forest.nodes):
        raise ValueError("matching condition is defined on the initial mesh")
    incident: dict[tuple[int, int], list[int]] = {}
    for t in forest.roots:
        for e in forest.nodes[t].edges():
            incident.setdefault(e, []).append(t)
    for e, tris in incident.items():
        if len(tris) < 2:
            continue
        flags = [_edge(*forest.nodes[t].refinement_edge) == e for t in tris]
        if any(flags) and not all(flags):
            return False
    return True


def _check_conforming_input(coords, triangles):
    coords = np.asarray(coords, float)
    nv = len(coords)
    # duplicate coordinates break edge identification by vertex id
    seen = {}
    for i, c in enumerate(coords):
        key = tuple(c)
        if key in seen:
            raise NonConforming(f"vertices {seen[key]} and {i} coincide")
        seen[key] = i

    incident: dict[tuple[int, int], int] = {}
    for tri in triangles:
        i, j, k = tri
        if len({i, j, k}) < 3:
            raise DegenerateTriangle(f"triangle {tri} repeats a vertex id")
        if not all(0 <= v < nv for v in (i, j, k)):
            raise ValueError(f"triangle {tri} references an unknown vertex")
        if _triangle_area(coords[i], coords[j], coords[k]) <= 0.0:
            raise DegenerateTriangle(f"triangle {tri} has zero area")
        for e in (_edge(i, j), _edge(j, k), _edge(k, i)):
            incident[e] = incident.get(e, 0) + 1
            if incident[e] > 2:
                raise NonConforming(f"edge {e} shared by more than 2 triangles")

    # hanging vertex: some vertex lies strictly inside an edge of the mesh
    edges = np.array(sorted(incident), int)
    if len(edges):
        a = coords[edges[:, 0]]
        b = coords[edges[:, 1]]
        ab = b - a
        ab2 = np.einsum("ij,ij->i", ab, ab)
        for vid in range(nv):
            p = coords[vid]
            s = np.einsum("ij,ij->i", p - a, ab) / ab2
            foot = a + s[:, None] * ab
            dist2 = np.einsum("ij,ij->i", p - foot, p - foot)
            inside = (s > 1e-10) & (s < 1 - 1e-10) & (dist2 <= 1e-20 * ab2)
            for e_idx in np.nonzero(inside)[0]:
                if vid not in edges[e_idx]:
                    raise NonConforming(
                        f"vertex {vid} hangs on edge {tuple(edges[e_idx])}"
                    )
    return incident


def build_initial(coords, triangles, gamma_edges=(), chart_ids=None,
                  require_matching: bool = True) -> MeshForest:
    """Build a forest whose roots are the given conforming triangles.

    The local vertex order of each input triangle encodes the newest-vertex
    assignment: the refinement edge is ``(v0, v1)``.  The matching condition
    is verified eagerly so that later refinement never has to re-check it.
    Re-imported leaf meshes of refined forests are conforming but usually
    not matched; pass ``require_matching=False`` for those (the closure
    depth guard still protects refinement).
    """
    coords = np.asarray(coords, float)
    incident = _check_conforming_input(coords, triangles)

    gamma = {_edge(a, b) for a, b in gamma_edges}
    for e in gamma:
        if incident.get(e, 0) != 1:
            raise NonConforming(f"gamma edge {e} is not a boundary edge")

    if chart_ids is None:
        chart_ids = [0] * len(triangles)

    forest = MeshForest()
    forest.gamma_faces = set(gamma)
    forest._gamma_subedges = set(gamma)
    gamma_vertices = {v for e in gamma for v in e}
    for vid, c in enumerate(coords):
        forest._new_vertex(c, 0, vid in gamma_vertices)
    for tri, chart in zip(triangles, chart_ids):
        i, j, k = (int(v) for v in tri)
        area = _triangle_area(coords[i], coords[j], coords[k])
        nid = len(forest.nodes)
        forest.nodes.append(TriNode((i, j, k), 0, int(chart), area))
        forest.roots.append(nid)
        forest._register_leaf(nid)

    if require_matching and not check_matching(forest):
        raise MatchingViolation("refinement-edge assignment is not matched")
    return forest


# -- ASCII serialization --------------------------------------------------
#
# Line formats:  ``v x y z [g]``   vertex (``g`` marks gamma membership)
#                ``t i j k c``     triangle with chart id c
#                ``ge i j``        gamma edge


def serialize_leaves(forest: MeshForest) -> str:
    """Serialize the leaf mesh in the ASCII format, renumbering vertices."""
    leaf_ids = forest.leaves
    used = sorted({v for t in leaf_ids for v in forest.nodes[t].vertex_ids})
    renum = {vid: i for i, vid in enumerate(used)}
    lines = []
    for vid in used:
        v = forest.vertices[vid]
        tail = " g" if v.on_gamma else ""
        lines.append("v %r %r %r%s" % (*(float(c) for c in v.coords), tail))
    for t in leaf_ids:
        n = forest.nodes[t]
        i, j, k = (renum[v] for v in n.vertex_ids)
        lines.append(f"t {i} {j} {k} {n.chart_id}")
    for a, b in sorted(forest._gamma_subedges):
        key = _edge(a, b)
        if key in forest._edge_leaves:  # only current leaf edges
            lines.append(f"ge {renum[a]} {renum[b]}")
    return "\n".join(lines) + "\n"


def parse_mesh(text):
    """Parse the ASCII format into (coords, triangles, gamma_edges, chart_ids)."""
    coords, tris, gamma, charts = [], [], [], []
    for ln, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            coords.append([float(x) for x in parts[1:4]])
        elif tag == "t":
            tris.append(tuple(int(x) for x in parts[1:4]))
            charts.append(int(parts[4]) if len(parts) > 4 else 0)
        elif tag == "ge":
            gamma.append((int(parts[1]), int(parts[2])))
        else:
            raise ValueError(f"line {ln}: unknown record {tag!r}")
    return np.array(coords), tris, gamma, charts


def load_mesh(text, require_matching: bool = True) -> MeshForest:
    coords, tris, gamma, charts = parse_mesh(text)
    return build_initial(coords, tris, gamma, charts, require_matching)
