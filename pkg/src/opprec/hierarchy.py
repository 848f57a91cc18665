"""Level meshes extracted from a bisection forest.

Level j holds every node of generation j together with all coarser leaves;
equivalently it is the ancestor-at-generation-min(gen, j) partition.  The
active vertices of level j are where the difference of consecutive
averaging quasi-interpolators can be nonzero: the midpoints inserted at
generation j plus the two endpoints of each bisected edge.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .mesh_forest import MeshForest

__all__ = ["LevelMesh", "LevelHierarchy", "extract_hierarchy", "compute_active"]


@dataclass
class LevelMesh:
    """One partition of the hierarchy with its vertex bookkeeping.

    Incidence is stored CSR-style: for vertex ``vids[i]`` the incident
    (element position, local vertex) pairs sit in
    ``inc_elem[indptr[i]:indptr[i+1]]`` / ``inc_local[...]``, where element
    positions index into ``element_ids``.
    """

    level: int
    element_ids: np.ndarray          # forest node ids forming the partition
    element_areas: np.ndarray
    vids: np.ndarray                 # sorted vertex ids of the level
    interior: np.ndarray             # boolean mask aligned with vids
    valence_arr: np.ndarray
    patch_area_arr: np.ndarray
    indptr: np.ndarray
    inc_elem: np.ndarray
    inc_local: np.ndarray
    _vpos: dict = field(repr=False, default_factory=dict)

    @property
    def vertex_ids(self) -> set:
        return set(int(v) for v in self.vids)

    @property
    def interior_vertex_ids(self) -> set:
        return set(int(v) for v in self.vids[self.interior])

    def vertex_pos(self, vid) -> int:
        return self._vpos[vid]

    def valence(self, vid) -> int:
        return int(self.valence_arr[self._vpos[vid]])

    def patch_area(self, vid) -> float:
        return float(self.patch_area_arr[self._vpos[vid]])

    def incident(self, vid):
        """(element position, local vertex) pairs of the elements at vid."""
        i = self._vpos[vid]
        sl = slice(self.indptr[i], self.indptr[i + 1])
        return list(zip(self.inc_elem[sl].tolist(), self.inc_local[sl].tolist()))


def _build_level(forest, j, element_ids):
    element_ids = np.asarray(sorted(element_ids), dtype=np.int64)
    nel = len(element_ids)
    tri = np.empty((nel, 3), dtype=np.int64)
    areas = np.empty(nel)
    for p, nid in enumerate(element_ids):
        node = forest.nodes[nid]
        tri[p] = node.vertex_ids
        areas[p] = node.area

    flat_v = tri.ravel()
    order = np.argsort(flat_v, kind="stable")
    sorted_v = flat_v[order]
    vids, starts = np.unique(sorted_v, return_index=True)
    indptr = np.append(starts, flat_v.size).astype(np.int64)
    inc_elem = (order // 3).astype(np.int64)
    inc_local = (order % 3).astype(np.int64)

    valence = np.diff(indptr)
    patch = np.add.reduceat(areas[inc_elem], indptr[:-1])
    interior = np.array([not forest.vertices[v].on_gamma for v in vids], dtype=bool)
    vpos = {int(v): i for i, v in enumerate(vids)}
    return LevelMesh(
        j, element_ids, areas, vids, interior, valence, patch,
        indptr, inc_elem, inc_local, vpos,
    )


@dataclass
class LevelHierarchy:
    forest: MeshForest
    levels: list[LevelMesh]
    # per level >= 1: internal forest nodes of generation j-1 (split at j)
    split_parents: list[np.ndarray]
    active: dict[int, set]

    @property
    def L(self) -> int:
        return len(self.levels) - 1

    def level(self, j) -> LevelMesh:
        return self.levels[j]

    def dofs(self, j) -> np.ndarray:
        """Interior vertex ids of level j, sorted (the nodal dof order)."""
        lm = self.levels[j]
        return lm.vids[lm.interior]

    def dof_index(self, j) -> dict:
        return {int(v): i for i, v in enumerate(self.dofs(j))}

    def split_midpoint(self, parent_id) -> int:
        """Vertex inserted on the refinement edge of a split parent."""
        ca, _ = self.forest.nodes[parent_id].children
        return self.forest.nodes[ca].vertex_ids[2]

    def parent_in_level(self, j, element_id) -> int:
        """The level-(j-1) element containing a level-j element."""
        if j < 1:
            raise ValueError("parent_in_level needs j >= 1")
        node = self.forest.nodes[element_id]
        return node.parent if node.gen == j else element_id

    def level_stats_csv(self) -> str:
        out = io.StringIO()
        out.write("level,n_elements,n_interior_vertices,n_active\n")
        for j, lm in enumerate(self.levels):
            out.write(
                f"{j},{len(lm.element_ids)},{int(lm.interior.sum())},{len(self.active[j])}\n"
            )
        return out.getvalue()


def compute_active(hierarchy: LevelHierarchy, j: int) -> set:
    """Interior vertices where the level-j interpolator difference can live.

    Level 0 is the whole interior vertex set.  For j >= 1 these are the
    generation-j midpoints plus the interior endpoints of every edge
    bisected at level j; the patch of any other old vertex is unchanged
    (as a region) by the level-j bisections.
    """
    forest = hierarchy.forest
    if j == 0:
        lm = hierarchy.levels[0]
        return set(int(v) for v in lm.vids[lm.interior])
    act = set()
    for pid in hierarchy.split_parents[j]:
        node = forest.nodes[pid]
        m = hierarchy.split_midpoint(pid)
        if not forest.vertices[m].on_gamma:
            act.add(int(m))
        for v in node.refinement_edge:
            if not forest.vertices[v].on_gamma:
                act.add(int(v))
    return act


def extract_hierarchy(forest: MeshForest) -> LevelHierarchy:
    """Materialize the level meshes, split lists and active sets."""
    leaves = forest.leaves
    L = max(forest.nodes[t].gen for t in leaves)

    by_gen: list[list[int]] = [[] for _ in range(L + 1)]
    leaves_by_gen: list[list[int]] = [[] for _ in range(L + 1)]
    internal_by_gen: list[list[int]] = [[] for _ in range(L + 1)]
    for nid, node in enumerate(forest.nodes):
        if node.gen > L:
            continue
        by_gen[node.gen].append(nid)
        if node.children is None:
            leaves_by_gen[node.gen].append(nid)
        else:
            internal_by_gen[node.gen].append(nid)

    levels = []
    coarser_leaves: list[int] = []
    for j in range(L + 1):
        elements = by_gen[j] + coarser_leaves
        levels.append(_build_level(forest, j, elements))
        coarser_leaves.extend(leaves_by_gen[j])

    split_parents = [np.array([], dtype=np.int64)]
    for j in range(1, L + 1):
        split_parents.append(np.asarray(sorted(internal_by_gen[j - 1]), dtype=np.int64))

    hier = LevelHierarchy(forest, levels, split_parents, {})
    for j in range(L + 1):
        hier.active[j] = compute_active(hier, j)
    return hier
