"""Transfer matrices between the nodal and element-wise linear spaces.

Nodal vectors hold one value per interior vertex of a level (sorted vertex
id order); element-linear vectors hold an ``(n_elements, 3)`` array of
element-local vertex values of discontinuous piecewise linears.

The upward projection sweep rests on a single 3x6 constant: the
L2-orthogonal projection of a piecewise linear function on the two children
of a bisected triangle onto linears on the parent.  Affine equivalence of
the split makes the matrix shape-independent.
"""

from __future__ import annotations

import numpy as np

from .errors import LevelMismatch, MeshTooLarge
from .hierarchy import LevelHierarchy

__all__ = [
    "PROJECTION_STENCIL",
    "STENCIL_COLUMN_SOURCE",
    "STENCIL_ROW_TARGET",
    "child_to_parent_matrix",
    "project_children_to_parent",
    "embed_E",
    "sweep_node_values",
    "project_R_sweep",
    "average_H",
    "prolong_P",
    "dense_Pi",
    "dense_prolongation",
    "ancestor_at_level",
    "eval_on_level",
]

# Child-pair to parent projection, rows/columns in the stencil ordering:
# rows give the parent value at (apex, v1, v0); column c reads the child
# value at stencil position c, namely (first child @ apex, second child @
# apex, first child @ v0, second child @ v1, first child @ midpoint,
# second child @ midpoint).  "apex" is the parent's newest vertex v2.
PROJECTION_STENCIL = np.array(
    [
        [1 / 2, 1 / 2, 0, 0, 0, 0],
        [-1 / 4, 1 / 4, -1 / 4, 3 / 4, 0, 1 / 2],
        [1 / 4, -1 / 4, 3 / 4, -1 / 4, 1 / 2, 0],
    ]
)

# Stencil column c reads concatenated-natural child values (A0 A1 A2 B0 B1 B2)
# at these positions; stencil row r lands on this parent local vertex.
STENCIL_COLUMN_SOURCE = np.array([0, 4, 1, 3, 2, 5])
STENCIL_ROW_TARGET = np.array([2, 1, 0])


def child_to_parent_matrix() -> np.ndarray:
    """The stencil rearranged to natural order: rows (v0, v1, v2) of the
    parent, columns (A0, A1, A2, B0, B1, B2) of the children."""
    nat = np.zeros((3, 6))
    for r in range(3):
        for c in range(6):
            nat[STENCIL_ROW_TARGET[r], STENCIL_COLUMN_SOURCE[c]] = PROJECTION_STENCIL[r, c]
    return nat


_NAT = child_to_parent_matrix()


def project_children_to_parent(values6) -> np.ndarray:
    """Apply the projection stencil to 6 child values in stencil order."""
    return PROJECTION_STENCIL @ np.asarray(values6, float)


def _leaf_dof_table(hier: LevelHierarchy) -> np.ndarray:
    """(n_leaves, 3) dof indices of the leaf vertices, -1 on gamma."""
    lm = hier.levels[hier.L]
    index = hier.dof_index(hier.L)
    table = np.full((len(lm.element_ids), 3), -1, dtype=np.int64)
    for p, nid in enumerate(lm.element_ids):
        for k, vid in enumerate(hier.forest.nodes[nid].vertex_ids):
            table[p, k] = index.get(int(vid), -1)
    return table


def embed_E(hier: LevelHierarchy, u) -> np.ndarray:
    """Embed a leaf-level nodal vector into element-wise linears.

    Duplicates the value of every interior vertex into each incident leaf
    (valence many copies); gamma vertices contribute zeros.
    """
    u = np.asarray(u, float)
    dofs = _leaf_dof_table(hier)
    if u.shape != (int(hier.levels[hier.L].interior.sum()),):
        raise LevelMismatch("nodal vector does not match the leaf level")
    padded = np.append(u, 0.0)
    return padded[dofs]


def sweep_node_values(hier: LevelHierarchy, x_leaf) -> np.ndarray:
    """Upward tree sweep of the element-linear projections.

    Returns an ``(n_nodes, 3)`` array: leaves carry ``x_leaf``, every
    internal node the projection of its children.  Restricted to the
    elements of level j this is the level-j L2 projection of ``x_leaf``.
    """
    forest = hier.forest
    x_leaf = np.asarray(x_leaf, float)
    leaf_ids = hier.levels[hier.L].element_ids
    if x_leaf.shape != (len(leaf_ids), 3):
        raise LevelMismatch("element-linear vector does not match the leaf mesh")
    values = np.zeros((len(forest.nodes), 3))
    values[leaf_ids] = x_leaf
    for j in range(hier.L, 0, -1):
        parents = hier.split_parents[j]
        if len(parents) == 0:
            continue
        ca = np.array([forest.nodes[p].children[0] for p in parents])
        cb = np.array([forest.nodes[p].children[1] for p in parents])
        stacked = np.hstack([values[ca], values[cb]])
        values[parents] = stacked @ _NAT.T
    return values


def level_view(hier: LevelHierarchy, values, j) -> np.ndarray:
    """Element-linear vector of level j out of a node-value sweep."""
    return values[hier.levels[j].element_ids]


def project_R_sweep(hier: LevelHierarchy, x_leaf) -> list[np.ndarray]:
    """All level projections of a leaf element-linear vector (index = level)."""
    values = sweep_node_values(hier, x_leaf)
    return [level_view(hier, values, j) for j in range(hier.L + 1)]


def average_H(hier: LevelHierarchy, j, x) -> np.ndarray:
    """Area-weighted nodal averaging of an element-linear vector at level j."""
    lm = hier.levels[j]
    x = np.asarray(x, float)
    if x.shape != (len(lm.element_ids), 3):
        raise LevelMismatch(f"element-linear vector does not match level {j}")
    contrib = lm.element_areas[lm.inc_elem] * x[lm.inc_elem, lm.inc_local]
    sums = np.add.reduceat(contrib, lm.indptr[:-1])
    return sums[lm.interior] / lm.patch_area_arr[lm.interior]


def _midpoint_edges(hier: LevelHierarchy, j) -> dict[int, tuple[int, int]]:
    """midpoint vertex -> endpoints of the edge bisected at level j."""
    out = {}
    for pid in hier.split_parents[j]:
        m = hier.split_midpoint(pid)
        v0, v1 = hier.forest.nodes[pid].refinement_edge
        out[int(m)] = (int(v0), int(v1))
    return out


def prolong_P(hier: LevelHierarchy, j, u_coarse) -> np.ndarray:
    """Embed a level-(j-1) nodal vector into level j.

    Values at surviving vertices are copied; a new midpoint receives the
    mean of its edge endpoints, where gamma endpoints count as zero.
    """
    if j < 1:
        raise LevelMismatch("prolongation needs j >= 1")
    u_coarse = np.asarray(u_coarse, float)
    coarse_index = hier.dof_index(j - 1)
    if u_coarse.shape != (len(coarse_index),):
        raise LevelMismatch(f"nodal vector does not match level {j - 1}")
    edges = _midpoint_edges(hier, j)

    def value_at(vid):
        i = coarse_index.get(vid)
        return u_coarse[i] if i is not None else 0.0

    out = np.empty(len(hier.dofs(j)))
    for row, vid in enumerate(hier.dofs(j)):
        vid = int(vid)
        if vid in coarse_index:
            out[row] = u_coarse[coarse_index[vid]]
        else:
            a, b = edges[vid]
            out[row] = 0.5 * (value_at(a) + value_at(b))
    return out


def dense_prolongation(hier: LevelHierarchy, j) -> np.ndarray:
    """Matrix of prolong_P (level j-1 nodal -> level j nodal)."""
    n_coarse = len(hier.dofs(j - 1))
    mat = np.zeros((len(hier.dofs(j)), n_coarse))
    for col in range(n_coarse):
        e = np.zeros(n_coarse)
        e[col] = 1.0
        mat[:, col] = prolong_P(hier, j, e)
    return mat


# -- dense quadrature oracle ------------------------------------------------


def _barycentric(tri, pts):
    """Barycentric coordinates of 3d points lying in the triangle's plane."""
    p0, p1, p2 = tri
    e1, e2 = p1 - p0, p2 - p0
    g = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
    rhs = np.stack([(pts - p0) @ e1, (pts - p0) @ e2])
    ab = np.linalg.solve(g, rhs)
    lam = np.empty((pts.shape[0], 3))
    lam[:, 1] = ab[0]
    lam[:, 2] = ab[1]
    lam[:, 0] = 1.0 - ab[0] - ab[1]
    return lam


def _edge_midpoint_rule(tri):
    """3-point midpoint rule on a triangle, exact for quadratics."""
    p0, p1, p2 = tri
    pts = 0.5 * np.array([p0 + p1, p1 + p2, p2 + p0])
    area = 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0))
    return pts, np.full(3, area / 3.0)


def _descendant_leaves(forest, nid):
    out = []
    stack = [nid]
    while stack:
        t = stack.pop()
        ch = forest.nodes[t].children
        if ch is None:
            out.append(t)
        else:
            stack.extend(ch)
    return out


def ancestor_at_level(hier: LevelHierarchy, leaf_id, j) -> int:
    """The level-j element containing a leaf."""
    forest = hier.forest
    t = leaf_id
    while forest.nodes[t].gen > j:
        t = forest.nodes[t].parent
    return t


def eval_on_level(hier: LevelHierarchy, j, u_j, leaf_id, bary) -> float:
    """Evaluate the level-j nodal function at a barycentric point of a leaf."""
    forest = hier.forest
    coords = forest.coords_array()
    point = np.asarray(bary, float) @ coords[list(forest.nodes[leaf_id].vertex_ids)]
    elem = ancestor_at_level(hier, leaf_id, j)
    tri = coords[list(forest.nodes[elem].vertex_ids)]
    lam = _barycentric(tri, point[None, :])[0]
    index = hier.dof_index(j)
    val = 0.0
    for k, vid in enumerate(forest.nodes[elem].vertex_ids):
        i = index.get(int(vid))
        if i is not None:
            val += lam[k] * u_j[i]
    return val


def dense_Pi(hier: LevelHierarchy, j, max_leaves: int = 512) -> np.ndarray:
    """Dense matrix of the level-j averaging quasi-interpolator.

    Independent of the sweep path: the element-wise projections are
    computed by exact 3-point quadrature of products of linears over the
    descendant leaves of each level-j element.
    """
    forest = hier.forest
    lm = hier.levels[j]
    n_leaves = len(hier.levels[hier.L].element_ids)
    if n_leaves > max_leaves:
        raise MeshTooLarge(f"dense oracle limited to {max_leaves} leaves, got {n_leaves}")

    coords = forest.coords_array()
    fine_index = hier.dof_index(hier.L)
    rows_index = hier.dof_index(j)
    pi = np.zeros((len(rows_index), len(fine_index)))

    for pos, nid in enumerate(lm.element_ids):
        tvids = list(forest.nodes[nid].vertex_ids)
        tri = coords[tvids]
        mass = np.zeros((3, 3))
        pts, wts = _edge_midpoint_rule(tri)
        lam = _barycentric(tri, pts)
        for q in range(3):
            mass += wts[q] * np.outer(lam[q], lam[q])

        load = np.zeros((3, len(fine_index)))
        for leaf in _descendant_leaves(forest, nid):
            lvids = list(forest.nodes[leaf].vertex_ids)
            lpts, lwts = _edge_midpoint_rule(coords[lvids])
            lam_T = _barycentric(tri, lpts)
            lam_leaf = _barycentric(coords[lvids], lpts)
            for q in range(3):
                for k, vid in enumerate(lvids):
                    col = fine_index.get(int(vid))
                    if col is not None:
                        load[:, col] += lwts[q] * lam_T[q] * lam_leaf[q, k]

        coeff = np.linalg.solve(mass, load)
        area = lm.element_areas[pos]
        for k, vid in enumerate(tvids):
            row = rows_index.get(int(vid))
            if row is not None:
                pi[row] += (area / lm.patch_area(vid)) * coeff[k]
    return pi
