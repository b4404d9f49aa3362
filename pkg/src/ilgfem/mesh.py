"""Conforming triangulations with newest-vertex-bisection refinement.

Elements are stored counterclockwise and rotated so that the refinement
edge is always the local edge 0, i.e. the edge ``(v0, v1)``; the newest
vertex is ``v2``.  Local edge ``k`` joins ``v_k`` and ``v_{k+1 mod 3}``.
"""
from __future__ import annotations

from functools import cached_property
from pathlib import Path

import numpy as np


class RefinementError(RuntimeError):
    """Raised when the bisection closure fails to terminate."""


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.flags.writeable = False
    return a


class Mesh:
    """Immutable triangular mesh with edge and neighbour topology.

    ``parents`` (optional) lists, for every vertex created by the refinement
    that produced this mesh, the two endpoints of the coarse edge it bisects.
    New vertices are appended, so coarse vertex ``i`` is fine vertex ``i``.
    """

    def __init__(self, vertices, elements, parents=None):
        self.vertices = _frozen(vertices, float)
        self.elements = _frozen(elements, np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (V, 2)")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise ValueError("elements must have shape (F, 3)")
        self.parents = None if parents is None else _frozen(parents, np.int64).reshape(-1, 2)

    def __repr__(self):
        return f"Mesh(vertices={self.n_vertices}, elements={self.n_elements}, edges={self.n_edges})"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_coarse_vertices(self) -> int:
        """Vertex count of the mesh this one was refined from."""
        if self.parents is None:
            return self.n_vertices
        return self.n_vertices - len(self.parents)

    @property
    def refinement_edge(self) -> np.ndarray:
        """Local index of each element's refinement edge (always 0)."""
        return np.zeros(self.n_elements, dtype=np.int64)

    @cached_property
    def _topology(self):
        el = self.elements
        local = np.stack([el, np.roll(el, -1, axis=1)], axis=2).reshape(-1, 2)
        keys = np.sort(local, axis=1)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        element_edges = inverse.reshape(-1, 3)

        n_edges = len(edges)
        owners = np.repeat(np.arange(len(el)), 3)
        edge_elements = np.full((n_edges, 2), -1, dtype=np.int64)
        # First occurrence fills slot 0, second occurrence slot 1.
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_elements[sorted_edges[first], 0] = owners[order[first]]
        edge_elements[sorted_edges[~first], 1] = owners[order[~first]]
        counts = np.bincount(inverse, minlength=n_edges)
        if counts.max(initial=0) > 2:
            raise ValueError("non-manifold mesh: an edge has more than two elements")
        return edges, element_edges, edge_elements

    @property
    def edges(self) -> np.ndarray:
        """Edge endpoints, shape (E, 2), smaller vertex index first."""
        return self._topology[0]

    @property
    def element_edges(self) -> np.ndarray:
        """Edge id of each local edge, shape (F, 3)."""
        return self._topology[1]

    @property
    def edge_elements(self) -> np.ndarray:
        """Adjacent elements of each edge, shape (E, 2); -1 marks the boundary."""
        return self._topology[2]

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return self.edge_elements[:, 1] < 0

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.edges[self.boundary_edges].ravel()] = True
        return flags

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def diameters(self) -> np.ndarray:
        """h_K, the longest edge of each element."""
        return self.edge_lengths[self.element_edges].max(axis=1)

    def check(self, area=None, atol=1e-12):
        """Assert the structural invariants; returns self for chaining."""
        if np.any(self.signed_areas <= 0):
            raise AssertionError("element with nonpositive signed area")
        # Refinement only creates edge midpoints, so a hanging node is a
        # vertex sitting exactly at the midpoint of a one-sided edge.
        b = self.edges[self.boundary_edges]
        mids = 0.5 * (self.vertices[b[:, 0]] + self.vertices[b[:, 1]])
        known = set(map(tuple, self.vertices.tolist()))
        if any(tuple(m) in known for m in mids.tolist()):
            raise AssertionError("hanging node: a vertex bisects a one-sided edge")
        if area is not None and abs(self.signed_areas.sum() - area) > atol:
            raise AssertionError("element areas do not sum to the domain area")
        euler = self.n_vertices - self.n_edges + self.n_elements
        if euler != 1:
            raise AssertionError(f"Euler characteristic {euler} != 1")
        return self


def _orient_longest_first(vertices, elements):
    """Rotate elements so that the longest edge becomes local edge 0.

    Ties are broken by the lowest index of the opposite vertex, which keeps
    the assignment independent of the input rotation.
    """
    el = np.asarray(elements, dtype=np.int64)
    p = vertices[el]
    # length of the edge opposite local vertex k, i.e. edge (k+1, k+2)
    opp = np.stack(
        [np.linalg.norm(p[:, (k + 2) % 3] - p[:, (k + 1) % 3], axis=1) for k in range(3)],
        axis=1,
    )
    longest = opp.max(axis=1, keepdims=True)
    candidate = np.isclose(opp, longest, rtol=1e-12, atol=0.0)
    score = np.where(candidate, el, np.iinfo(np.int64).max)
    k = np.argmin(score, axis=1)
    # opposite vertex k must become v2: start from k+1
    idx = (k[:, None] + 1 + np.arange(3)[None, :]) % 3
    return np.take_along_axis(el, idx, axis=1)


def _ccw(vertices, elements):
    el = np.array(elements, dtype=np.int64)
    p = vertices[el]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    el[neg] = el[neg][:, [0, 2, 1]]
    return el


def from_triangles(vertices, elements) -> Mesh:
    """Build a mesh from raw triangles with longest-edge refinement edges."""
    vertices = np.asarray(vertices, dtype=float)
    el = _ccw(vertices, elements)
    return Mesh(vertices, _orient_longest_first(vertices, el))


def make_lshape_initial(uniform_refinements: int = 2) -> Mesh:
    """Criss-cross triangulation of (-1,1)^2 minus [0,1]x[-1,0].

    Three unit squares are each split into four triangles about their
    centre (12 elements, 11 vertices), then red-refined the requested
    number of times.  Two refinements give the 192-element start mesh.
    """
    if uniform_refinements < 0:
        raise ValueError("uniform_refinements must be nonnegative")
    corners = [(-1, -1), (0, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
    index = {c: i for i, c in enumerate(corners)}
    vertices = [list(c) for c in corners]
    triangles = []
    for x0, y0 in [(-1, 0), (0, 0), (-1, -1)]:
        centre = len(vertices)
        vertices.append([x0 + 0.5, y0 + 0.5])
        sq = [(x0, y0), (x0 + 1, y0), (x0 + 1, y0 + 1), (x0, y0 + 1)]
        for a, b in zip(sq, sq[1:] + sq[:1]):
            triangles.append([index[a], index[b], centre])
    mesh = from_triangles(vertices, triangles)
    for _ in range(uniform_refinements):
        mesh = uniform_refine(mesh)
    return from_triangles(mesh.vertices, mesh.elements)


def _midpoint_vertices(mesh: Mesh, edge_mask):
    """Append midpoints of the masked edges; returns (vertices, edge->new id)."""
    new_ids = np.full(mesh.n_edges, -1, dtype=np.int64)
    chosen = np.flatnonzero(edge_mask)
    new_ids[chosen] = mesh.n_vertices + np.arange(len(chosen))
    ends = mesh.edges[chosen]
    mids = 0.5 * (mesh.vertices[ends[:, 0]] + mesh.vertices[ends[:, 1]])
    return np.vstack([mesh.vertices, mids]), new_ids, ends


def uniform_refine(mesh: Mesh) -> Mesh:
    """Red refinement: every element is replaced by four similar children.

    Each child's refinement edge is the one parallel to the parent's.
    """
    vertices, new_ids, parents = _midpoint_vertices(mesh, np.ones(mesh.n_edges, dtype=bool))
    a, b, c = mesh.elements.T
    m = new_ids[mesh.element_edges]
    m_ab, m_bc, m_ca = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack(
        [
            np.stack([a, m_ab, m_ca], axis=1),
            np.stack([m_ab, b, m_bc], axis=1),
            np.stack([m_ca, m_bc, c], axis=1),
            np.stack([m_bc, m_ca, m_ab], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    return Mesh(vertices, children, parents)


def mark_closure(mesh: Mesh, marked) -> np.ndarray:
    """Edges to bisect so that refining the ``marked`` elements stays conforming."""
    ee = mesh.element_edges
    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    edge_marked[ee[marked, 0]] = True
    for _ in range(8 * mesh.n_elements + 1):
        swap = ~edge_marked[ee[:, 0]] & (edge_marked[ee[:, 1]] | edge_marked[ee[:, 2]])
        if not swap.any():
            return edge_marked
        edge_marked[ee[swap, 0]] = True
    raise RefinementError("bisection closure did not terminate")


def bisect(mesh: Mesh, marked) -> Mesh:
    """Newest vertex bisection of the marked elements plus conforming closure.

    An element whose refinement edge is split is bisected once; if further
    edges are split, the children are bisected again (up to four
    grandchildren).  Children are numbered consecutively in parent order.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                                  dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked[0] < 0 or marked[-1] >= mesh.n_elements:
        raise IndexError("marked element id out of range")

    edge_marked = mark_closure(mesh, marked)
    vertices, new_ids, parents = _midpoint_vertices(mesh, edge_marked)
    nn = new_ids[mesh.element_edges]
    s0, s1, s2 = nn[:, 0] >= 0, nn[:, 1] >= 0, nn[:, 2] >= 0
    a, b, c = mesh.elements.T
    m1, m2, m3 = nn[:, 0], nn[:, 1], nn[:, 2]

    none = ~s0
    b1 = s0 & ~s1 & ~s2
    b12 = s0 & s1 & ~s2
    b13 = s0 & ~s1 & s2
    b123 = s0 & s1 & s2

    counts = np.select([none, b1, b12, b13, b123], [1, 2, 3, 3, 4])
    offset = np.concatenate([[0], np.cumsum(counts)[:-1]])
    out = np.empty((counts.sum(), 3), dtype=np.int64)

    def put(mask, *kids):
        base = offset[mask]
        for j, kid in enumerate(kids):
            out[base + j] = np.stack([x[mask] for x in kid], axis=1)

    put(none, (a, b, c))
    put(b1, (c, a, m1), (b, c, m1))
    put(b12, (c, a, m1), (m1, b, m2), (c, m1, m2))
    put(b13, (m1, c, m3), (a, m1, m3), (b, c, m1))
    put(b123, (m1, c, m3), (a, m1, m3), (m1, b, m2), (c, m1, m2))
    return Mesh(vertices, out, parents)


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text dump: header, ``x y`` lines, then ``i j k b`` lines."""
    lines = [f"vertices {mesh.n_vertices} elements {mesh.n_elements}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k} {r}" for (i, j, k), r in zip(mesh.elements.tolist(), mesh.refinement_edge)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_mesh(path) -> Mesh:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 4 or head[0] != "vertices" or head[2] != "elements":
            raise ValueError(f"bad mesh header in {path}")
        nv, nf = int(head[1]), int(head[3])
        vertices = np.array([fh.readline().split() for _ in range(nv)], dtype=float)
        rows = np.array([fh.readline().split() for _ in range(nf)], dtype=np.int64).reshape(nf, 4)
    el, ref = rows[:, :3], rows[:, 3]
    idx = (ref[:, None] + np.arange(3)[None, :]) % 3
    return Mesh(vertices.reshape(nv, 2), np.take_along_axis(el, idx, axis=1))
