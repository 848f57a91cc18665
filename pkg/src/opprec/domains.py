"""Canonical initial meshes used by the experiments and tests."""

from __future__ import annotations

import numpy as np

from .mesh_forest import MeshForest, build_initial

__all__ = ["cube_surface", "unit_square", "two_triangle_square", "corner_vertex_ids"]

# Corners of [-1, 1]^3, id = bit pattern (x, y, z).
_CUBE_CORNERS = np.array(
    [[2 * (i & 1) - 1, 2 * ((i >> 1) & 1) - 1, 2 * ((i >> 2) & 1) - 1] for i in range(8)],
    dtype=float,
)

# One quad per face, cyclic order, rotated so the refinement diagonal joins
# positions 0 and 2.  Any per-face diagonal assignment is matched; the
# diagonals here are arranged so that every corner meets one or two of them
# (triangle valences 4 and 5), which fixes the coarse-mesh conditioning.
_CUBE_FACES = [
    (0, 1, 3, 2),  # z = -1, diagonal (0, 3)
    (4, 5, 7, 6),  # z = +1, diagonal (4, 7)
    (0, 1, 5, 4),  # y = -1, diagonal (0, 5)
    (3, 7, 6, 2),  # y = +1, diagonal (3, 6)
    (2, 6, 4, 0),  # x = -1, diagonal (2, 4)
    (1, 3, 7, 5),  # x = +1, diagonal (1, 7)
]


def cube_surface() -> MeshForest:
    """Boundary of [-1, 1]^3: 2 triangles per face, 12 in total.

    Each face is split along a diagonal that is the refinement edge of both
    triangles, so the matching condition holds.  The surface is closed:
    gamma is empty and every vertex is interior.
    """
    tris = []
    charts = []
    for chart, (a, b, c, d) in enumerate(_CUBE_FACES):
        tris.append((c, a, b))  # refinement edge = diagonal (c, a)
        tris.append((a, c, d))
        charts.extend([chart, chart])
    return build_initial(_CUBE_CORNERS, tris, chart_ids=charts)


def corner_vertex_ids(forest: MeshForest) -> list[int]:
    """Vertices of a cube forest sitting at the 8 cube corners."""
    out = []
    for v in forest.vertices[:8]:
        if np.all(np.abs(np.abs(v.coords) - 1.0) < 1e-12):
            out.append(v.id)
    return out


def unit_square(side: float = 1.0, dirichlet: bool = True) -> MeshForest:
    """[0, side]^2 split into 4 triangles meeting at the center.

    The refinement edge of each triangle is its boundary edge, so the
    interior spokes are refinement edges of neither neighbor and the
    assignment is matched.  With ``dirichlet`` the whole boundary is gamma.
    """
    s = float(side)
    coords = np.array(
        [[0, 0, 0], [s, 0, 0], [s, s, 0], [0, s, 0], [s / 2, s / 2, 0]], dtype=float
    )
    tris = [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)]
    gamma = [(0, 1), (1, 2), (2, 3), (3, 0)] if dirichlet else []
    return build_initial(coords, tris, gamma_edges=gamma)


def two_triangle_square(dirichlet: bool = False) -> MeshForest:
    """Unit square split along the diagonal, refinement edges on the diagonal."""
    coords = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    tris = [(2, 0, 1), (0, 2, 3)]
    gamma = [(0, 1), (1, 2), (2, 3), (3, 0)] if dirichlet else []
    return build_initial(coords, tris, gamma_edges=gamma)
