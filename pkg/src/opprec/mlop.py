"""The multi-level opposite-order operator on continuous piecewise linears.

The bilinear form sums, over levels j, the products of consecutive
quasi-interpolator differences at the active vertices of level j, weighted
by 2^(j(2s/d - 1)).  The fast apply realizes the factored form

    E^T sum_j (H_j R_j - P_j H_{j-1} R_{j-1})^T  scale_j  (H_j R_j - ...) E

with one upward tree sweep for all projections R_j, per-level evaluation at
the active vertices only (the difference vanishes elsewhere), and one
downward sweep for the adjoint; the cost is O(#leaves).
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .errors import SizeMismatch
from .hierarchy import LevelHierarchy
from .transfer import _NAT, dense_Pi, dense_prolongation

__all__ = ["MultiLevelOperator", "assemble_BS_dense", "operation_counter"]

_STENCIL_FLOPS = 33  # one 3x6 matvec


class _FlopCounter:
    __slots__ = ("count",)

    def __init__(self):
        self.count = 0

    def add(self, n):
        self.count += int(n)


class _LevelPlan:
    """Flat index arrays driving one level of the fast apply."""

    __slots__ = (
        "n_act", "a_row", "a_node", "a_local", "a_w",
        "n_ce", "c_row", "c_node", "c_local", "c_w",
        "m_row", "m_a", "m_b", "e_row", "e_ce",
    )


def _incidence_arrays(hier, j, vids):
    """Stacked (row, node id, local, area/patch) incidence of vids at level j."""
    lm = hier.levels[j]
    rows, nodes_, locals_, weights = [], [], [], []
    for row, vid in enumerate(vids):
        i = lm.vertex_pos(vid)
        sl = slice(lm.indptr[i], lm.indptr[i + 1])
        elems = lm.inc_elem[sl]
        rows.append(np.full(len(elems), row, dtype=np.int64))
        nodes_.append(lm.element_ids[elems])
        locals_.append(lm.inc_local[sl])
        weights.append(lm.element_areas[elems] / lm.patch_area_arr[i])
    cat = lambda parts, dt: (
        np.concatenate(parts) if parts else np.empty(0, dtype=dt)
    )
    return (
        cat(rows, np.int64),
        cat(nodes_, np.int64),
        cat(locals_, np.int64),
        cat(weights, float),
    )


class MultiLevelOperator:
    """Opposite-order operator of order +2s on the leaf nodal space."""

    def __init__(self, hierarchy: LevelHierarchy, s: float, d: int = 2):
        if not 0.0 <= s <= 1.0:
            raise ValueError("order parameter s must lie in [0, 1]")
        if d != 2:
            raise ValueError("only triangle meshes (d = 2) are supported")
        self.hierarchy = hierarchy
        self.s = float(s)
        self.d = int(d)
        L = hierarchy.L
        # The point-value sums stand in for squared L2 norms of the level
        # differences; |T| at level j is (root area) * 2^-j, so the weights
        # carry the root area to keep the form covariant under rescaling the
        # geometry.  Without it the bubble/smooth balance (beta) would be
        # tied to the mesh units.
        self.area_scale = float(np.mean(hierarchy.levels[0].element_areas))
        self.level_scale = self.area_scale * 2.0 ** (
            np.arange(L + 1) * (2.0 * s / d - 1.0)
        )
        self._build_plan()

    @property
    def n_dofs(self) -> int:
        return len(self._dofs_L)

    def _build_plan(self):
        hier = self.hierarchy
        forest = hier.forest
        self._dofs_L = hier.dofs(hier.L)
        index_L = hier.dof_index(hier.L)
        self.n_nodes = len(forest.nodes)

        lmL = hier.levels[hier.L]
        self._leaf_ids = lmL.element_ids
        table = np.full((len(self._leaf_ids), 3), -1, dtype=np.int64)
        for p, nid in enumerate(self._leaf_ids):
            for k, vid in enumerate(forest.nodes[nid].vertex_ids):
                table[p, k] = index_L.get(int(vid), -1)
        self._leaf_dofs = table

        # generation-batched child/parent index arrays for the two sweeps
        self._sweep = []
        for j in range(1, hier.L + 1):
            parents = hier.split_parents[j]
            ca = np.array([forest.nodes[p].children[0] for p in parents], dtype=np.int64)
            cb = np.array([forest.nodes[p].children[1] for p in parents], dtype=np.int64)
            self._sweep.append((parents, ca, cb))

        # level 0: plain averaging over the whole interior vertex set
        act0 = [int(v) for v in hier.dofs(0)]
        self._plan0 = _incidence_arrays(hier, 0, act0)
        self._n_act0 = len(act0)

        self._levels = []
        for j in range(1, hier.L + 1):
            plan = _LevelPlan()
            act = sorted(hier.active[j])
            act_pos = {v: i for i, v in enumerate(act)}
            plan.n_act = len(act)
            plan.a_row, plan.a_node, plan.a_local, plan.a_w = _incidence_arrays(hier, j, act)

            # both parents of a matched pair report the same midpoint/edge
            midpoint_edge, endpoints = {}, set()
            for pid in hier.split_parents[j]:
                m = hier.split_midpoint(pid)
                v0, v1 = forest.nodes[pid].refinement_edge
                endpoints.update((int(v0), int(v1)))
                midpoint_edge[int(m)] = (int(v0), int(v1))
            # coarse vertices whose level-(j-1) average feeds the prolongation
            ce = sorted(v for v in endpoints if not forest.vertices[v].on_gamma)
            ce_pos = {v: i for i, v in enumerate(ce)}
            plan.n_ce = len(ce)
            plan.c_row, plan.c_node, plan.c_local, plan.c_w = _incidence_arrays(hier, j - 1, ce)

            m_row, m_a, m_b = [], [], []
            for m, (v0, v1) in sorted(midpoint_edge.items()):
                if m not in act_pos:
                    continue  # gamma midpoint, not a dof
                m_row.append(act_pos[m])
                m_a.append(ce_pos.get(v0, -1))
                m_b.append(ce_pos.get(v1, -1))
            plan.m_row = np.array(m_row, dtype=np.int64)
            plan.m_a = np.array(m_a, dtype=np.int64)
            plan.m_b = np.array(m_b, dtype=np.int64)

            e_row = [act_pos[v] for v in ce]
            plan.e_row = np.array(e_row, dtype=np.int64)
            plan.e_ce = np.arange(len(ce), dtype=np.int64)
            self._levels.append(plan)

    # -- fast path ---------------------------------------------------------

    def apply(self, u, counter: _FlopCounter | None = None) -> np.ndarray:
        """y with y[i] = (B u)(phi_i) in the leaf nodal basis; cost O(#leaves)."""
        u = np.asarray(u, float)
        if u.shape != (self.n_dofs,):
            raise SizeMismatch(f"expected length {self.n_dofs}, got {u.shape}")
        tick = counter.add if counter is not None else (lambda n: None)

        # embed and sweep the projections up the forest
        values = np.zeros((self.n_nodes, 3))
        padded = np.append(u, 0.0)
        values[self._leaf_ids] = padded[self._leaf_dofs]
        for parents, ca, cb in reversed(self._sweep):
            if len(parents):
                values[parents] = np.hstack([values[ca], values[cb]]) @ _NAT.T
                tick(len(parents) * _STENCIL_FLOPS)

        acc = np.zeros((self.n_nodes, 3))

        # level 0
        rows, nodes_, locals_, w = self._plan0
        y = np.zeros(self._n_act0)
        np.add.at(y, rows, w * values[nodes_, locals_])
        z = self.level_scale[0] * y
        np.add.at(acc, (nodes_, locals_), w * z[rows])
        tick(4 * len(rows) + len(y))

        # levels 1..L: evaluate the interpolator difference at active
        # vertices, scale, and push the adjoint back onto the forest nodes
        for j, plan in enumerate(self._levels, start=1):
            w_c = np.zeros(plan.n_ce + 1)
            np.add.at(w_c[:-1], plan.c_row, plan.c_w * values[plan.c_node, plan.c_local])
            y = np.zeros(plan.n_act)
            np.add.at(y, plan.a_row, plan.a_w * values[plan.a_node, plan.a_local])
            y[plan.m_row] -= 0.5 * (w_c[plan.m_a] + w_c[plan.m_b])
            y[plan.e_row] -= w_c[plan.e_ce]
            z = self.level_scale[j] * y

            np.add.at(acc, (plan.a_node, plan.a_local), plan.a_w * z[plan.a_row])
            v_c = np.zeros(plan.n_ce + 1)
            np.add.at(v_c, plan.m_a, 0.5 * z[plan.m_row])
            np.add.at(v_c, plan.m_b, 0.5 * z[plan.m_row])
            np.add.at(v_c[:-1], plan.e_ce, z[plan.e_row])
            np.add.at(acc, (plan.c_node, plan.c_local), -plan.c_w * v_c[plan.c_row])
            tick(4 * (len(plan.a_row) + len(plan.c_row))
                 + 5 * len(plan.m_row) + 2 * len(plan.e_row) + len(y))

        # adjoint sweep down to the leaves, then transpose of the embedding
        for parents, ca, cb in self._sweep:
            if len(parents):
                six = acc[parents] @ _NAT
                acc[ca] += six[:, :3]
                acc[cb] += six[:, 3:]
                tick(len(parents) * (_STENCIL_FLOPS + 6))

        res = np.zeros(self.n_dofs)
        valid = self._leaf_dofs >= 0
        leaf_acc = acc[self._leaf_ids]
        np.add.at(res, self._leaf_dofs[valid], leaf_acc[valid])
        tick(int(valid.sum()))
        return res

    def __call__(self, u):
        return self.apply(u)

    def apply_counted(self, u):
        counter = _FlopCounter()
        y = self.apply(u, counter)
        return y, counter.count

    # -- dense / sparse oracles --------------------------------------------

    def assemble_dense(self, max_leaves: int = 512) -> np.ndarray:
        """Dense matrix assembled from the quadrature-based interpolators."""
        hier = self.hierarchy
        mats = [dense_Pi(hier, j, max_leaves) for j in range(hier.L + 1)]
        B = np.zeros((self.n_dofs, self.n_dofs))
        prev = None
        for j in range(hier.L + 1):
            diff = mats[j] if j == 0 else mats[j] - dense_prolongation(hier, j) @ prev
            B += self.level_scale[j] * (diff.T @ diff)
            prev = mats[j]
        return B

    def assemble_sparse(self, max_leaves: int = 4096) -> sparse.csr_matrix:
        """Column-by-column materialization of the fast apply (debugging)."""
        if self.n_dofs > max_leaves:
            raise SizeMismatch("sparse materialization guarded to small meshes")
        cols = []
        for i in range(self.n_dofs):
            e = np.zeros(self.n_dofs)
            e[i] = 1.0
            cols.append(sparse.csc_matrix(self.apply(e)[:, None]))
        return sparse.hstack(cols).tocsr()


def assemble_BS_dense(op: MultiLevelOperator) -> np.ndarray:
    return op.assemble_dense()


def operation_counter(op: MultiLevelOperator, u) -> int:
    """Floating-point operations performed by one fast application."""
    _, count = op.apply_counted(u)
    return count
