"""Structured triangular meshes of the unit disk with boundary electrodes.

The disk is built from concentric rings.  Ring ``k`` (``1 <= k < R``) holds
``k * L`` equally spaced nodes, the outer ring holds ``R * L`` nodes placed so
that every electrode arc starts and ends exactly on a node.  Neighbouring rings
are stitched together by a zipper that walks both rings in angle order and
closes each quad with its shorter diagonal, which keeps the triangulation
symmetric under reflection across the x-axis and rotation by ``2*pi/L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .io import atomic_open

DEFAULT_REFINEMENT = 7
DEFAULT_COVERAGE = 0.5

_TWO_PI = 2.0 * math.pi


class Circle(NamedTuple):
    center: tuple[float, float]
    radius: float
    conductivity: float


@dataclass(frozen=True)
class Mesh:
    """Triangulated disk.

    ``boundary_edges[j]`` joins two consecutive outer-ring nodes (counter-
    clockwise); ``electrode_arcs[l]`` lists the boundary-edge indices covered
    by electrode ``l``.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_edges: np.ndarray
    electrode_arcs: tuple[np.ndarray, ...]
    radius: float = 1.0

    def __post_init__(self):
        for arr in (self.nodes, self.elements, self.boundary_edges, *self.electrode_arcs):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_electrodes(self) -> int:
        return len(self.electrode_arcs)

    def element_areas(self) -> np.ndarray:
        return signed_areas(self.nodes, self.elements)

    def electrode_edges(self, electrode: int) -> np.ndarray:
        """Node-index pairs of the boundary edges under ``electrode``."""
        return self.boundary_edges[self.electrode_arcs[electrode]]

    def boundary_nodes(self) -> np.ndarray:
        return self.boundary_edges[:, 0]


def signed_areas(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p = nodes[elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _outer_ring_angles(n_electrodes: int, refinement: int, coverage: float) -> np.ndarray:
    period = _TWO_PI / n_electrodes
    width = coverage * period
    n_elec_edges = min(max(int(round(coverage * refinement)), 1), refinement - 1)
    n_gap_edges = refinement - n_elec_edges
    angles = []
    for ell in range(n_electrodes):
        center = ell * period
        start = center - 0.5 * width
        angles.extend(start + k * width / n_elec_edges for k in range(n_elec_edges + 1))
        gap_start = center + 0.5 * width
        gap = period - width
        angles.extend(gap_start + k * gap / n_gap_edges for k in range(1, n_gap_edges))
    angles = np.mod(np.asarray(angles), _TWO_PI)
    # exact zeros matter for the zipper start and for mirror symmetry
    angles[np.isclose(angles, _TWO_PI, rtol=0, atol=1e-13)] = 0.0
    return np.sort(angles)


def _zipper(inner: np.ndarray, outer: np.ndarray, inner_ids: np.ndarray,
            outer_ids: np.ndarray, nodes: list, add_node) -> list[tuple[int, int, int]]:
    """Triangulate the band between two closed rings given by sorted angles.

    Each step closes the quad formed by the current and next nodes of both
    rings with its shorter diagonal; a quad with equal diagonals (an isosceles
    trapezoid) gets a centre node.  The rule is purely geometric, so the band
    inherits every symmetry of its node set.  ``inner[0]`` must be 0.
    """
    n_in, n_out = len(inner), len(outer)
    a = np.append(inner, inner[0] + _TWO_PI)
    # outer sequence starts at the last node with angle <= 0 (mod 2 pi)
    if outer[0] == 0.0:
        b = np.append(outer, _TWO_PI)
        b_ids = np.append(outer_ids, outer_ids[0])
    else:
        b = np.concatenate([[outer[-1] - _TWO_PI], outer])
        b_ids = np.concatenate([[outer_ids[-1]], outer_ids])
    a_ids = np.append(inner_ids, inner_ids[0])

    def dist(p, q):
        return math.dist(nodes[p], nodes[q])

    tris = []
    i = j = 0
    tol = 1e-12
    while i < n_in or j < n_out:
        if i == n_in:
            advance_inner = False
        elif j == n_out:
            advance_inner = True
        else:
            d_in = dist(a_ids[i + 1], b_ids[j])
            d_out = dist(a_ids[i], b_ids[j + 1])
            if abs(d_in - d_out) <= tol:
                c = add_node(0.5 * (a[i] + a[i + 1] + b[j] + b[j + 1]) / 2)
                tris.extend([(a_ids[i], a_ids[i + 1], c), (a_ids[i + 1], b_ids[j + 1], c),
                             (b_ids[j + 1], b_ids[j], c), (b_ids[j], a_ids[i], c)])
                i += 1
                j += 1
                continue
            advance_inner = d_in < d_out
        if advance_inner:
            tris.append((a_ids[i], a_ids[i + 1], b_ids[j]))
            i += 1
        else:
            tris.append((a_ids[i], b_ids[j + 1], b_ids[j]))
            j += 1
    return tris


def build_disk_mesh(n_electrodes: int = 16, refinement: int = DEFAULT_REFINEMENT,
                    electrode_coverage: float = DEFAULT_COVERAGE,
                    radius: float = 1.0) -> Mesh:
    """Build the structured disk mesh.

    Electrode ``l`` is centred at angle ``2*pi*l/L`` and spans a fraction
    ``electrode_coverage`` of its ``2*pi/L`` boundary period.  The mesh has
    about ``L * refinement**2`` elements.
    """
    if n_electrodes < 4:
        raise ValueError(f"need at least 4 electrodes, got {n_electrodes}")
    if not 0.0 < electrode_coverage < 1.0:
        raise ValueError(f"electrode_coverage must lie in (0, 1), got {electrode_coverage}")
    if refinement < 2 or n_electrodes * refinement**2 < 64:
        raise ValueError(f"refinement {refinement} gives fewer than 64 elements")
    if radius <= 0:
        raise ValueError("radius must be positive")

    L, R = n_electrodes, refinement
    rings = [np.zeros(1)]
    for k in range(1, R):
        rings.append(_TWO_PI * np.arange(k * L) / (k * L))
    rings.append(_outer_ring_angles(L, R, electrode_coverage))

    nodes = [(0.0, 0.0)]
    ring_ids = [np.array([0])]
    for k in range(1, R + 1):
        r = radius * k / R
        start = len(nodes)
        nodes.extend((r * math.cos(t), r * math.sin(t)) for t in rings[k])
        ring_ids.append(np.arange(start, len(nodes)))

    elements: list[tuple[int, int, int]] = []
    ids1 = ring_ids[1]
    n1 = len(ids1)
    elements.extend((0, ids1[j], ids1[(j + 1) % n1]) for j in range(n1))
    for k in range(1, R):
        r_mid = radius * (k + 0.5) / R

        def add_node(theta, r_mid=r_mid):
            nodes.append((r_mid * math.cos(theta), r_mid * math.sin(theta)))
            return len(nodes) - 1

        elements.extend(_zipper(rings[k], rings[k + 1], ring_ids[k], ring_ids[k + 1],
                                nodes, add_node))
    nodes = np.array(nodes)
    elements = np.array(elements, dtype=np.int64)
    flip = signed_areas(nodes, elements) < 0
    elements[flip] = elements[flip][:, [0, 2, 1]]

    outer = ring_ids[R]
    boundary_edges = np.column_stack([outer, np.roll(outer, -1)])
    # electrode membership by edge midpoint angle
    t0 = rings[R]
    t1 = np.roll(t0, -1)
    t1 = np.where(t1 <= t0, t1 + _TWO_PI, t1)
    mid = 0.5 * (t0 + t1)
    half = 0.5 * electrode_coverage * _TWO_PI / L
    arcs = []
    for ell in range(L):
        offset = np.mod(mid - ell * _TWO_PI / L + math.pi, _TWO_PI) - math.pi
        idx = np.flatnonzero(np.abs(offset) < half)
        arcs.append(idx[np.argsort(offset[idx])])
    return Mesh(nodes=nodes, elements=elements, boundary_edges=boundary_edges,
                electrode_arcs=tuple(arcs), radius=float(radius))


def element_centroids(mesh: Mesh) -> np.ndarray:
    return mesh.nodes[mesh.elements].mean(axis=1)


def electrode_centers(mesh: Mesh) -> np.ndarray:
    """Angle of the midpoint of each electrode arc, in [-pi, pi)."""
    out = []
    for ell in range(mesh.n_electrodes):
        edges = mesh.electrode_edges(ell)
        ends = mesh.nodes[[edges[0, 0], edges[-1, 1]]]
        t = np.arctan2(ends[:, 1], ends[:, 0])
        span = np.mod(t[1] - t[0], _TWO_PI)
        out.append(np.mod(t[0] + 0.5 * span + math.pi, _TWO_PI) - math.pi)
    return np.array(out)


def paint_phantom(mesh: Mesh, background: float = 1.0,
                  circles: Iterable[Circle | Sequence] = ()) -> np.ndarray:
    """Per-element conductivity; the last circle containing a centroid wins."""
    if background <= 0:
        raise ValueError("background conductivity must be positive")
    cent = element_centroids(mesh)
    values = np.full(mesh.n_elements, float(background))
    for center, r, cond in circles:
        if cond <= 0:
            raise ValueError(f"circle conductivity must be positive, got {cond}")
        inside = np.hypot(cent[:, 0] - center[0], cent[:, 1] - center[1]) <= r
        values[inside] = cond
    return values


def check_field(mesh: Mesh, values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_elements,):
        raise ValueError(f"field has shape {values.shape}, mesh has {mesh.n_elements} elements")
    if not np.all(values > 0) or not np.all(np.isfinite(values)):
        raise ValueError("conductivity values must be finite and positive")
    return values


def save_mesh(mesh: Mesh, path) -> None:
    with atomic_open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_nodes} elements {mesh.n_elements} electrodes {mesh.n_electrodes}\n")
        fh.write(f"radius {float(mesh.radius)!r}\n")
        for x, y in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.elements:
            fh.write(f"{a} {b} {c}\n")
        fh.write(f"boundary_edges {len(mesh.boundary_edges)}\n")
        for a, b in mesh.boundary_edges:
            fh.write(f"{a} {b}\n")
        for arc in mesh.electrode_arcs:
            fh.write(" ".join(str(e) for e in arc) + "\n")


def load_mesh(path) -> Mesh:
    with open(path) as fh:
        lines = fh.read().splitlines()
    head = lines[0].split()
    if head[0::2] != ["nodes", "elements", "electrodes"]:
        raise ValueError(f"{path}: not a mesh file")
    n_nodes, n_elem, n_el = (int(v) for v in head[1::2])
    radius = float(lines[1].split()[1])
    pos = 2
    nodes = np.array([[float(v) for v in ln.split()] for ln in lines[pos:pos + n_nodes]])
    pos += n_nodes
    elements = np.array([[int(v) for v in ln.split()] for ln in lines[pos:pos + n_elem]],
                        dtype=np.int64)
    pos += n_elem
    n_edges = int(lines[pos].split()[1])
    pos += 1
    edges = np.array([[int(v) for v in ln.split()] for ln in lines[pos:pos + n_edges]],
                     dtype=np.int64)
    pos += n_edges
    arcs = tuple(np.array([int(v) for v in ln.split()], dtype=np.int64)
                 for ln in lines[pos:pos + n_el])
    if len(arcs) != n_el:
        raise ValueError(f"{path}: expected {n_el} electrode lines")
    return Mesh(nodes=nodes.reshape(n_nodes, 2), elements=elements.reshape(n_elem, 3),
                boundary_edges=edges.reshape(n_edges, 2), electrode_arcs=arcs, radius=radius)
