"""Galerkin matrices for the experiments.

The Laplace single layer operator on a closed triangulated surface is
assembled densely in the piecewise-constant basis.  Singular panel pairs
(identical, edge- or vertex-adjacent) use regularized tensor quadrature:
the 4d parameter integral is split into subregions on which a Duffy-type
change of variables absorbs the kernel singularity into the Jacobian,
leaving an analytic integrand on [0, 1]^4 handled by tensor Gauss rules.
Separated pairs use triangle product rules graded by the distance to
diameter ratio; near pairs of very unequal size subdivide the larger panel
until the separation criterion holds.

Mass and stiffness matrices on continuous piecewise linears (gamma degrees
of freedom eliminated) back the norm-equivalence property tests.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import sparse

from .errors import OpenSurface, QuadratureBreakdown
from .mesh_forest import MeshForest

__all__ = ["assemble_single_layer", "assemble_mass", "assemble_stiffness"]

FOUR_PI = 4.0 * np.pi

# distance/diameter thresholds for the separated-pair rules (1, 3, 6 points)
FAR_THRESHOLD = 8.0
MID_THRESHOLD = 3.0
SUBDIVIDE_DISPARITY = 2.0

# symmetric triangle rules in barycentric coordinates, weights sum to 1
_RULE_1 = (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]))
_RULE_3 = (
    np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
    np.full(3, 1 / 3),
)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_RULE_6 = (
    np.array(
        [
            [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
            [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
        ]
    ),
    np.array([0.111690794839005] * 3 + [0.054975871827661] * 3) * 2.0,
)


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


class _SingularRules:
    """Precomputed parameter grids of the regularized 4d quadratures.

    Each case is a list of pieces (U, V, S, T, W): x runs on the chart
    chi(u, v) = A + u (B - A) + v (C - B) of the first panel, y likewise on
    the second, and W carries the tensor weights times the Jacobian factor
    of the piece.  The entry is 4 |tau| |sigma| sum W k(x, y).
    """

    def __init__(self, n: int = 4):
        g, w = _gauss01(n)
        om, r, a, c = np.meshgrid(g, g, g, g, indexing="ij")
        W0 = np.einsum("i,j,k,l->ijkl", w, w, w, w)
        flat = lambda arr: arr.reshape(-1)
        om, r, a, c, W0 = map(flat, (om, r, a, c, W0))

        # identical panels: relative coordinates (w, z) = u - s, v - t;
        # two pieces for z >= 0 split by max(z, w), one for z < 0; the
        # (u,v) <-> (s,t) half is folded in by doubling (symmetric kernel).
        self.identical = []
        u = om
        piece = (u, om * (r + (1 - r) * c), om * (1 - r * a), om * (1 - r) * c,
                 2.0 * om**3 * r * (1 - r) * W0)
        self.identical.append(piece)
        piece = (u, om * (r * a + (1 - r) * c), om * (1 - r), om * (1 - r) * c,
                 2.0 * om**3 * r * (1 - r) * W0)
        self.identical.append(piece)
        piece = (u, om * (1 - r) * c, om * (1 - r * (1 - a)),
                 om * ((1 - r) * c + r * a), 2.0 * om**3 * r * (1 - r) * W0)
        self.identical.append(piece)

        # common edge (A, B shared): one ordered half; the assembler runs it
        # twice with the panel roles exchanged.
        self.edge_half = [
            (u, om * r, om * (1 - r * a), om * (1 - r * a) * r * c,
             om**3 * r**2 * (1 - r * a) * W0),
            (u, om * r * a, om * (1 - r), om * (1 - r) * r * c,
             om**3 * r**2 * (1 - r) * W0),
            (u, om * r * a, om * (1 - r * c), om * (1 - r * c) * r,
             om**3 * r**2 * (1 - r * c) * W0),
        ]

        # common vertex (A shared)
        self.vertex = [
            (om, om * r, om * a, om * a * c, om**3 * a * W0),
            (om * a, om * a * c, om, om * r, om**3 * a * W0),
        ]


def _eval_pieces(pieces, A1, E01, E11, A2, E02, E12, areas1, areas2):
    """Batched singular-pair integrals of 1/|x-y| (no 1/4pi)."""
    total = np.zeros(len(A1))
    for U, V, S, T, W in pieces:
        X = A1[:, None, :] + U[None, :, None] * E01[:, None, :] + V[None, :, None] * E11[:, None, :]
        Y = A2[:, None, :] + S[None, :, None] * E02[:, None, :] + T[None, :, None] * E12[:, None, :]
        R = np.sqrt(np.einsum("pqi,pqi->pq", X - Y, X - Y))
        total += (W[None, :] / R).sum(axis=1)
    return 4.0 * areas1 * areas2 * total


def _rule_points(tri, rule):
    bary, w = rule
    return bary @ tri, w


def _tensor_entry(tri1, area1, tri2, area2, rule1, rule2):
    p1, w1 = _rule_points(tri1, rule1)
    p2, w2 = _rule_points(tri2, rule2)
    d = p1[:, None, :] - p2[None, :, :]
    R = np.sqrt(np.einsum("ijk,ijk->ij", d, d))
    return area1 * area2 * float(w1 @ (1.0 / R) @ w2)


def _diameters(tris):
    """(n,) diameters of an (n, 3, 3) triangle batch."""
    e = np.stack(
        [tris[:, 0] - tris[:, 1], tris[:, 1] - tris[:, 2], tris[:, 2] - tris[:, 0]],
        axis=1,
    )
    return np.sqrt(np.einsum("nei,nei->ne", e, e)).max(axis=1)


def _subdivide_batch(tris):
    """(n, 3, 3) -> (n, 4, 3, 3) midpoint splits."""
    m01 = 0.5 * (tris[:, 0] + tris[:, 1])
    m12 = 0.5 * (tris[:, 1] + tris[:, 2])
    m20 = 0.5 * (tris[:, 2] + tris[:, 0])
    out = np.empty((len(tris), 4, 3, 3))
    out[:, 0] = np.stack([tris[:, 0], m01, m20], axis=1)
    out[:, 1] = np.stack([m01, tris[:, 1], m12], axis=1)
    out[:, 2] = np.stack([m20, m12, tris[:, 2]], axis=1)
    out[:, 3] = np.stack([m01, m12, m20], axis=1)
    return out


def _rule6_batch(tris1, areas1, tris2, areas2):
    """Batched 6x6 tensor rule for separated pair batches."""
    P1 = np.einsum("qb,nbi->nqi", _RULE_6[0], tris1)
    P2 = np.einsum("qb,nbi->nqi", _RULE_6[0], tris2)
    diff = P1[:, :, None, :] - P2[:, None, :, :]
    R = np.sqrt(np.einsum("nabi,nabi->nab", diff, diff))
    w = _RULE_6[1]
    return areas1 * areas2 * np.einsum("a,nab,b->n", w, 1.0 / R, w)


def _near_batch(tris1, areas1, tris2, areas2, out, targets):
    """Separated but close pairs: subdivide the larger panel until the
    mid-field criterion (or size comparability) holds, in rounds over the
    whole worklist, accumulating into out[targets]."""
    for _ in range(80):
        if len(tris1) == 0:
            return
        d1, d2 = _diameters(tris1), _diameters(tris2)
        dist = np.linalg.norm(tris1.mean(axis=1) - tris2.mean(axis=1), axis=1)
        big, small = np.maximum(d1, d2), np.minimum(d1, d2)
        ready = (dist >= MID_THRESHOLD * big) | (big <= SUBDIVIDE_DISPARITY * small)
        if ready.any():
            vals = _rule6_batch(tris1[ready], areas1[ready], tris2[ready], areas2[ready])
            np.add.at(out, targets[ready], vals)
        rest = ~ready
        if not rest.any():
            return
        t1, a1 = tris1[rest], areas1[rest]
        t2, a2 = tris2[rest], areas2[rest]
        tg = targets[rest]
        split_first = d1[rest] >= d2[rest]
        parts1, parts2, pa1, pa2, ptg = [], [], [], [], []
        if split_first.any():
            sub = _subdivide_batch(t1[split_first])
            m = int(split_first.sum())
            parts1.append(sub.reshape(4 * m, 3, 3))
            pa1.append(np.repeat(a1[split_first] / 4.0, 4))
            parts2.append(np.repeat(t2[split_first], 4, axis=0))
            pa2.append(np.repeat(a2[split_first], 4))
            ptg.append(np.repeat(tg[split_first], 4))
        other = ~split_first
        if other.any():
            sub = _subdivide_batch(t2[other])
            m = int(other.sum())
            parts2.append(sub.reshape(4 * m, 3, 3))
            pa2.append(np.repeat(a2[other] / 4.0, 4))
            parts1.append(np.repeat(t1[other], 4, axis=0))
            pa1.append(np.repeat(a1[other], 4))
            ptg.append(np.repeat(tg[other], 4))
        tris1 = np.concatenate(parts1)
        tris2 = np.concatenate(parts2)
        areas1 = np.concatenate(pa1)
        areas2 = np.concatenate(pa2)
        targets = np.concatenate(ptg)
    raise QuadratureBreakdown("near-field subdivision did not separate the panels")


def _classify_adjacent(tri_vids):
    """(identical, edge, vertex) unordered pair lists with shared vertices."""
    n_t = len(tri_vids)
    v_sets = [set(t) for t in tri_vids]
    incident: dict[int, list[int]] = {}
    for t, vs in enumerate(v_sets):
        for v in vs:
            incident.setdefault(v, []).append(t)
    edge_pairs, vertex_pairs = [], []
    seen = set()
    for t in range(n_t):
        candidates = set()
        for v in v_sets[t]:
            candidates.update(incident[v])
        for t2 in candidates:
            if t2 <= t:
                continue
            shared = v_sets[t] & v_sets[t2]
            key = (t, t2)
            if key in seen:
                continue
            seen.add(key)
            if len(shared) == 2:
                edge_pairs.append((t, t2, tuple(sorted(shared))))
            elif len(shared) == 1:
                vertex_pairs.append((t, t2, next(iter(shared))))
    return edge_pairs, vertex_pairs


def _reorder_from(vids, tri, first, second=None):
    """Coordinates reordered so the shared vertex/edge comes first."""
    order = [vids.index(first)]
    if second is not None:
        order.append(vids.index(second))
    order += [i for i in range(3) if i not in order]
    return tri[order]


def assemble_single_layer(
    forest: MeshForest,
    *,
    quad_points: int = 4,
    threads: int | None = None,
    chunk: int = 512,
) -> np.ndarray:
    """Dense matrix of the kernel 1/(4 pi |x - y|) over all leaf panel pairs.

    Raises OpenSurface on meshes with boundary edges and
    QuadratureBreakdown if a non-finite entry shows up.
    """
    if forest.boundary_edges():
        raise OpenSurface("single layer assembly expects a closed surface")

    leaves = forest.leaves
    n_t = len(leaves)
    coords = forest.coords_array()
    tri_vids = [list(forest.nodes[t].vertex_ids) for t in leaves]
    tris = np.array([coords[v] for v in tri_vids])
    areas = np.array([forest.nodes[t].area for t in leaves])
    cents = tris.mean(axis=1)
    diams = np.array([_diameter(t) for t in tris])

    A = np.zeros((n_t, n_t))
    rules = _SingularRules(quad_points)
    n_workers = threads if threads else (os.cpu_count() or 1)

    # singular classes -----------------------------------------------------
    def batched(items, size=chunk):
        for i in range(0, len(items), size):
            yield items[i : i + size]

    def run_identical(block):
        idx = np.array(block)
        T = tris[idx]
        E0, E1 = T[:, 1] - T[:, 0], T[:, 2] - T[:, 1]
        vals = _eval_pieces(rules.identical, T[:, 0], E0, E1, T[:, 0], E0, E1,
                            areas[idx], areas[idx])
        A[idx, idx] = vals

    def run_edge(block):
        i1 = np.array([b[0] for b in block])
        i2 = np.array([b[1] for b in block])
        T1 = np.array([_reorder_from(tri_vids[b[0]], tris[b[0]], b[2][0], b[2][1]) for b in block])
        T2 = np.array([_reorder_from(tri_vids[b[1]], tris[b[1]], b[2][0], b[2][1]) for b in block])
        vals = np.zeros(len(block))
        for (Ta, Tb) in ((T1, T2), (T2, T1)):  # the two orderings of the half
            E0a, E1a = Ta[:, 1] - Ta[:, 0], Ta[:, 2] - Ta[:, 1]
            E0b, E1b = Tb[:, 1] - Tb[:, 0], Tb[:, 2] - Tb[:, 1]
            vals += _eval_pieces(rules.edge_half, Ta[:, 0], E0a, E1a, Tb[:, 0], E0b, E1b,
                                 areas[i1], areas[i2])
        A[i1, i2] = vals
        A[i2, i1] = vals

    def run_vertex(block):
        i1 = np.array([b[0] for b in block])
        i2 = np.array([b[1] for b in block])
        T1 = np.array([_reorder_from(tri_vids[b[0]], tris[b[0]], b[2]) for b in block])
        T2 = np.array([_reorder_from(tri_vids[b[1]], tris[b[1]], b[2]) for b in block])
        E01, E11 = T1[:, 1] - T1[:, 0], T1[:, 2] - T1[:, 1]
        E02, E12 = T2[:, 1] - T2[:, 0], T2[:, 2] - T2[:, 1]
        vals = _eval_pieces(rules.vertex, T1[:, 0], E01, E11, T2[:, 0], E02, E12,
                            areas[i1], areas[i2])
        A[i1, i2] = vals
        A[i2, i1] = vals

    edge_pairs, vertex_pairs = _classify_adjacent(tri_vids)
    jobs = []
    jobs += [(run_identical, list(b)) for b in batched(list(range(n_t)))]
    jobs += [(run_edge, b) for b in batched(edge_pairs)]
    jobs += [(run_vertex, b) for b in batched(vertex_pairs)]

    # separated pairs ------------------------------------------------------
    adjacency_mask = sparse.lil_matrix((n_t, n_t), dtype=bool)
    for t1, t2, _ in edge_pairs:
        adjacency_mask[t1, t2] = adjacency_mask[t2, t1] = True
    for t1, t2, _ in vertex_pairs:
        adjacency_mask[t1, t2] = adjacency_mask[t2, t1] = True
    adjacency_mask = adjacency_mask.tocsr()

    pts3 = np.einsum("qb,tbi->tqi", _RULE_3[0], tris)
    pts6 = np.einsum("qb,tbi->tqi", _RULE_6[0], tris)

    def run_targets(t_lo, t_hi):
        sl = slice(t_lo, t_hi)
        d = np.linalg.norm(cents[sl, None, :] - cents[None, :, :], axis=2)
        ratio = d / np.maximum(diams[sl, None], diams[None, :])
        adj = adjacency_mask[sl].toarray()
        for local in range(t_hi - t_lo):
            adj[local, t_lo + local] = True  # diagonal handled singularly

        far = (~adj) & (ratio >= FAR_THRESHOLD)
        mid = (~adj) & (ratio >= MID_THRESHOLD) & (ratio < FAR_THRESHOLD)
        near = (~adj) & (ratio < MID_THRESHOLD)

        ti, si = np.nonzero(far)
        if len(ti):
            dd = d[ti, si]
            A[ti + t_lo, si] = areas[ti + t_lo] * areas[si] / dd

        ti, si = np.nonzero(mid)
        if len(ti):
            P1, P2 = pts3[ti + t_lo], pts3[si]
            diff = P1[:, :, None, :] - P2[:, None, :, :]
            R = np.sqrt(np.einsum("pabi,pabi->pab", diff, diff))
            w = _RULE_3[1]
            vals = np.einsum("a,pab,b->p", w, 1.0 / R, w)
            A[ti + t_lo, si] = areas[ti + t_lo] * areas[si] * vals

        ti, si = np.nonzero(near)
        if len(ti):
            vals = np.zeros(len(ti))
            _near_batch(tris[ti + t_lo], areas[ti + t_lo], tris[si], areas[si],
                        vals, np.arange(len(ti)))
            A[ti + t_lo, si] = vals

    target_jobs = [(run_targets, lo, min(lo + 64, n_t)) for lo in range(0, n_t, 64)]

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(fn, *args) for fn, *args in jobs]
            futures += [pool.submit(fn, lo, hi) for fn, lo, hi in target_jobs]
            for f in futures:
                f.result()
    else:
        for fn, *args in jobs:
            fn(*args)
        for fn, lo, hi in target_jobs:
            fn(lo, hi)

    A /= FOUR_PI
    if not np.all(np.isfinite(A)):
        raise QuadratureBreakdown("single layer assembly produced a non-finite entry")
    return 0.5 * (A + A.T)


# -- P1 matrices on the nodal space ----------------------------------------


def _interior_dof_map(forest: MeshForest):
    used = sorted({v for t in forest.leaves for v in forest.nodes[t].vertex_ids})
    interior = [v for v in used if not forest.vertices[v].on_gamma]
    return {v: i for i, v in enumerate(interior)}


def assemble_mass(forest: MeshForest, eliminate_gamma: bool = True) -> sparse.csr_matrix:
    """P1 mass matrix of the leaf mesh, gamma rows/columns removed."""
    if eliminate_gamma:
        dof = _interior_dof_map(forest)
    else:
        used = sorted({v for t in forest.leaves for v in forest.nodes[t].vertex_ids})
        dof = {v: i for i, v in enumerate(used)}
    rows, cols, vals = [], [], []
    local = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 12.0
    for t in forest.leaves:
        vids = forest.nodes[t].vertex_ids
        area = forest.nodes[t].area
        for a in range(3):
            ia = dof.get(vids[a])
            if ia is None:
                continue
            for b in range(3):
                ib = dof.get(vids[b])
                if ib is None:
                    continue
                rows.append(ia)
                cols.append(ib)
                vals.append(area * local[a, b])
    n = len(dof)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble_stiffness(forest: MeshForest, eliminate_gamma: bool = True) -> sparse.csr_matrix:
    """P1 stiffness matrix of the leaf mesh, gamma rows/columns removed.

    Uses the edge-vector form K_ab = (g_a . g_b) / (4 |T|) with g_a the
    edge opposite vertex a in cyclic order; valid for any flat embedding.
    """
    coords = forest.coords_array()
    if eliminate_gamma:
        dof = _interior_dof_map(forest)
    else:
        used = sorted({v for t in forest.leaves for v in forest.nodes[t].vertex_ids})
        dof = {v: i for i, v in enumerate(used)}
    rows, cols, vals = [], [], []
    for t in forest.leaves:
        vids = forest.nodes[t].vertex_ids
        p = coords[list(vids)]
        g = np.array([p[2] - p[1], p[0] - p[2], p[1] - p[0]])
        area = forest.nodes[t].area
        local = (g @ g.T) / (4.0 * area)
        for a in range(3):
            ia = dof.get(vids[a])
            if ia is None:
                continue
            for b in range(3):
                ib = dof.get(vids[b])
                if ib is None:
                    continue
                rows.append(ia)
                cols.append(ib)
                vals.append(local[a, b])
    n = len(dof)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
