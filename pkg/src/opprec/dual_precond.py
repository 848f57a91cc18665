"""Preconditioner for piecewise-constant discretizations of negative-order
operators.

With the diagonal duality matrix D = diag(|T|), the sparse couplings p, q
between the piecewise-constant basis and the nodal/bubble parts, and the
diagonal bubble block B = beta * D^(1 - 2s/d), the preconditioner reads

    G = D^-1 (p^T B_S p + q^T B q) D^-1

where B_S is the multi-level opposite-order operator.  Every factor applies
in O(#T), so G does as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse

from .errors import SingularOperand, SizeMismatch
from .hierarchy import LevelHierarchy, extract_hierarchy
from .mesh_forest import MeshForest
from .mlop import MultiLevelOperator

__all__ = ["PrecondConfig", "Preconditioner", "assemble_dual_matrices", "calibrate_beta"]


@dataclass(frozen=True)
class PrecondConfig:
    s: float
    d: int = 2
    beta: float = 5.3

    def __post_init__(self):
        if not 0.0 <= self.s <= 1.0:
            raise ValueError("s must lie in [0, 1]")
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")


def assemble_dual_matrices(forest: MeshForest, config: PrecondConfig, hierarchy=None):
    """The diagonal and sparse factors (D, p, q, B) on the leaf mesh.

    p couples interior vertices to incident triangles with weight 1/valence;
    q is the identity minus 1/(d+1) times the valence-weighted overlap count
    of interior vertices shared by two triangles.  Rows of p follow the
    sorted interior vertex order, columns the sorted leaf order.
    """
    if hierarchy is None:
        hierarchy = extract_hierarchy(forest)
    lm = hierarchy.levels[hierarchy.L]
    n_t = len(lm.element_ids)

    D_diag = lm.element_areas.copy()
    BB_diag = config.beta * D_diag ** (1.0 - 2.0 * config.s / config.d)

    dof_index = hierarchy.dof_index(hierarchy.L)
    rows, cols, vals = [], [], []
    q_rows, q_cols, q_vals = [], [], []
    for i, vid in enumerate(lm.vids):
        if not lm.interior[i]:
            continue
        row = dof_index[int(vid)]
        sl = slice(lm.indptr[i], lm.indptr[i + 1])
        elems = lm.inc_elem[sl]
        inv_val = 1.0 / len(elems)
        for e in elems:
            rows.append(row)
            cols.append(int(e))
            vals.append(inv_val)
        coupling = inv_val / (config.d + 1.0)
        for e1 in elems:
            for e2 in elems:
                q_rows.append(int(e1))
                q_cols.append(int(e2))
                q_vals.append(-coupling)
    n_v0 = len(dof_index)
    p = sparse.csr_matrix((vals, (rows, cols)), shape=(n_v0, n_t))
    q = sparse.csr_matrix((q_vals, (q_rows, q_cols)), shape=(n_t, n_t))
    q = (sparse.identity(n_t, format="csr") + q).tocsr()
    return D_diag, p, q, BB_diag


class Preconditioner:
    """Applies G = D^-1 (p^T B_S p + q^T B q) D^-1 to leaf dual vectors."""

    def __init__(self, D_diag, p, q, BB_diag, BS: MultiLevelOperator, config: PrecondConfig):
        self.D_diag = D_diag
        self.p = p
        self.q = q
        self.BB_diag = BB_diag
        self.BS = BS
        self.config = config
        self.n = len(D_diag)

    @classmethod
    def build(cls, forest: MeshForest, config: PrecondConfig,
              hierarchy: LevelHierarchy | None = None) -> "Preconditioner":
        if hierarchy is None:
            hierarchy = extract_hierarchy(forest)
        D_diag, p, q, BB_diag = assemble_dual_matrices(forest, config, hierarchy)
        BS = MultiLevelOperator(hierarchy, s=config.s, d=config.d)
        return cls(D_diag, p, q, BB_diag, BS, config)

    @property
    def hierarchy(self) -> LevelHierarchy:
        return self.BS.hierarchy

    def apply(self, r, counter=None) -> np.ndarray:
        r = np.asarray(r, float)
        if r.shape != (self.n,):
            raise SizeMismatch(f"expected length {self.n}, got {r.shape}")
        rd = r / self.D_diag
        smooth = self.p.T @ self.BS.apply(self.p @ rd, counter)
        bubble = self.q.T @ (self.BB_diag * (self.q @ rd))
        if counter is not None:
            counter.add(2 * (self.p.nnz * 2 + self.q.nnz * 2) + 4 * self.n)
        return (smooth + bubble) / self.D_diag

    def __call__(self, r):
        return self.apply(r)

    def apply_counted(self, r):
        from .mlop import _FlopCounter

        counter = _FlopCounter()
        y = self.apply(r, counter)
        return y, counter.count

    def assemble_dense(self, max_leaves: int = 512) -> np.ndarray:
        B = self.BS.assemble_dense(max_leaves)
        pd = self.p.toarray()
        qd = self.q.toarray()
        inner = pd.T @ B @ pd + qd.T @ (self.BB_diag[:, None] * qd)
        return inner / np.outer(self.D_diag, self.D_diag)


def _spectral_radius_product(M, A):
    """rho(M A) for symmetric PSD M and SPD A via a Cholesky transform."""
    L = linalg.cholesky(A, lower=True)
    return float(np.max(np.abs(linalg.eigvalsh(L.T @ M @ L))))


def calibrate_beta(forest: MeshForest, A, config: PrecondConfig,
                   hierarchy: LevelHierarchy | None = None) -> float:
    """The bubble weight equating the spectral radii of the two summands.

    Returns rho(D^-1 p^T B_S p D^-1 A) / rho(D^-1 q^T D^(1-2s/d) q D^-1 A),
    which by linearity makes the two radii equal when used as beta.
    """
    if hierarchy is None:
        hierarchy = extract_hierarchy(forest)
    unit = PrecondConfig(s=config.s, d=config.d, beta=1.0)
    D_diag, p, q, BB_diag = assemble_dual_matrices(forest, unit, hierarchy)
    BS = MultiLevelOperator(hierarchy, s=unit.s, d=unit.d)
    B = BS.assemble_dense()
    pd = p.toarray() / D_diag
    qd = q.toarray() / D_diag
    M_smooth = pd.T @ B @ pd
    M_bubble = qd.T @ (BB_diag[:, None] * qd)
    A = np.asarray(A, float)
    rho_s = _spectral_radius_product(M_smooth, A)
    rho_b = _spectral_radius_product(M_bubble, A)
    if rho_b <= 1e-300 or rho_s <= 1e-300:
        raise SingularOperand("calibration operand has zero spectral radius")
    return rho_s / rho_b
