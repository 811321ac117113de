"""Pixel constraint graph, continuous components, quotient graphs, merging.

Pixels are identified by their row-major index ``v * width + u`` into the full
image grid. Undirected edges are stored as ``(a, b)`` pairs with ``a < b``,
ordered lexicographically by ``(a, b)``; all downstream code relies on this
deterministic ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cc

from .errors import EmptyMask
from .geometry import NormalMap

# Forward neighbor offsets (du, dv). Every offset points to a strictly larger
# row-major id, so enumerating them once per pixel yields each undirected edge
# exactly once.
_OFFSETS_4 = ((1, 0), (0, 1))
_OFFSETS_8 = ((1, 0), (-1, 1), (0, 1), (1, 1))

INVALID_LABEL = np.uint32(0xFFFFFFFF)


@dataclass(frozen=True)
class PixelGraph:
    """Adjacency structure over the valid pixels of a normal map."""

    width: int
    height: int
    vertices: np.ndarray  # (N,) row-major ids of valid pixels, ascending
    edges: np.ndarray  # (E, 2) int64, a < b, lexicographically sorted
    connectivity: int  # 4 or 8

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def compact_index(self) -> np.ndarray:
        """Map from pixel id to index into ``vertices`` (-1 for invalid)."""
        idx = np.full(self.width * self.height, -1, dtype=np.int64)
        idx[self.vertices] = np.arange(len(self.vertices))
        return idx


def build_pixel_graph(nmap: NormalMap, connectivity: int = 8) -> PixelGraph:
    """Enumerate all pairs of valid neighboring pixels.

    Raises :class:`EmptyMask` when the mask has no valid pixel.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    mask = nmap.mask
    h, w = mask.shape
    if not mask.any():
        raise EmptyMask("normal map has no valid pixel")

    ids = np.arange(h * w, dtype=np.int64).reshape(h, w)
    offsets = _OFFSETS_4 if connectivity == 4 else _OFFSETS_8
    a_parts, b_parts = [], []
    for du, dv in offsets:
        # Window of source pixels whose (du, dv) neighbor stays in bounds.
        src = (slice(0, h - dv), slice(max(0, -du), w - max(0, du)))
        dst = (slice(dv, h), slice(max(0, du), w + min(0, du)))
        pair = mask[src] & mask[dst]
        a_parts.append(ids[src][pair])
        b_parts.append(ids[dst][pair])
    if a_parts:
        a = np.concatenate(a_parts)
        b = np.concatenate(b_parts)
        order = np.lexsort((b, a))
        edges = np.stack([a[order], b[order]], axis=1)
    else:
        edges = np.empty((0, 2), dtype=np.int64)
    vertices = np.flatnonzero(mask.ravel())
    return PixelGraph(w, h, vertices, edges, connectivity)


def relative_normal_angle(n_a: np.ndarray, n_b: np.ndarray) -> np.ndarray:
    """Angle in radians between unit normals; elementwise over trailing axis 3."""
    dot = np.sum(np.asarray(n_a) * np.asarray(n_b), axis=-1)
    return np.arccos(np.clip(dot, -1.0, 1.0))


def edge_angles(g: PixelGraph, nmap: NormalMap) -> np.ndarray:
    """Relative normal angle for every edge of ``g``."""
    flat = nmap.normals.reshape(-1, 3)
    return relative_normal_angle(flat[g.edges[:, 0]], flat[g.edges[:, 1]])


@dataclass(frozen=True)
class Partition:
    """Assignment of every valid pixel to a component.

    ``labels`` covers the full grid (flattened); invalid pixels carry -1.
    Labels are canonical: component k is the one whose smallest row-major
    pixel id is the k-th smallest among all components.
    """

    labels: np.ndarray  # (H*W,) int64, -1 for invalid pixels
    component_count: int
    version: int = 0

    @cached_property
    def sizes(self) -> np.ndarray:
        valid = self.labels[self.labels >= 0]
        return np.bincount(valid, minlength=self.component_count)

    @cached_property
    def _grouping(self):
        valid_ids = np.flatnonzero(self.labels >= 0)
        lab = self.labels[valid_ids]
        order = np.argsort(lab, kind="stable")
        bounds = np.searchsorted(lab[order], np.arange(self.component_count + 1))
        return valid_ids[order], bounds

    def pixels_of(self, c: int) -> np.ndarray:
        """Row-major pixel ids of component ``c`` (ascending)."""
        grouped, bounds = self._grouping
        return grouped[bounds[c]:bounds[c + 1]]


def _canonical_labels(raw: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel so components are numbered by order of first appearance."""
    _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse], len(first)


def form_components(
    g: PixelGraph, nmap: NormalMap, theta_c: float | None
) -> Partition:
    """Group pixels into continuous components by normal similarity.

    Edges whose relative normal angle is strictly below ``theta_c`` (radians)
    are kept and the components are the connected parts of the resulting
    subgraph. ``theta_c=None`` is the pixel-level limit: every valid pixel
    becomes its own component.
    """
    n = g.vertex_count
    labels = np.full(g.width * g.height, -1, dtype=np.int64)
    if theta_c is None:
        labels[g.vertices] = np.arange(n)
        return Partition(labels, n, version=0)

    keep = edge_angles(g, nmap) < float(theta_c)
    ce = g.compact_index[g.edges[keep]]
    adj = sp.coo_matrix(
        (np.ones(len(ce), dtype=np.int8), (ce[:, 0], ce[:, 1])), shape=(n, n)
    )
    _, raw = _cc(adj, directed=False)
    canon, count = _canonical_labels(raw)
    labels[g.vertices] = canon
    return Partition(labels, count, version=0)


@dataclass(frozen=True)
class QuotientGraph:
    """Component-level view of a pixel graph under a partition.

    ``edge_ids`` indexes into the generating graph's edge array so per-edge
    quantities (coefficients, weights, residuals) can be shared.
    """

    component_count: int
    inter_edges: np.ndarray  # (K, 2) pixel ids, subset of the pixel graph
    edge_ids: np.ndarray  # (K,) indices into PixelGraph.edges
    comp_pairs: np.ndarray  # (K, 2) component labels of the endpoints

    @property
    def inter_edge_count(self) -> int:
        return len(self.inter_edges)


def build_quotient(g: PixelGraph, p: Partition) -> QuotientGraph:
    """Select the edges of ``g`` whose endpoints lie in different components."""
    la = p.labels[g.edges[:, 0]]
    lb = p.labels[g.edges[:, 1]]
    ids = np.flatnonzero(la != lb)
    return QuotientGraph(
        p.component_count,
        g.edges[ids],
        ids,
        np.stack([la[ids], lb[ids]], axis=1),
    )


def intra_edge_ids(g: PixelGraph, p: Partition) -> np.ndarray:
    """Indices of the edges of ``g`` internal to a component (complement of
    the quotient's edge set)."""
    la = p.labels[g.edges[:, 0]]
    lb = p.labels[g.edges[:, 1]]
    return np.flatnonzero(la == lb)


def merge_components(
    q: QuotientGraph, p: Partition, residuals: np.ndarray
) -> Partition:
    """Union every component with its smallest-residual neighbor.

    ``residuals`` holds one non-negative magnitude per inter-edge of ``q``.
    Each component selects the incident inter-edge of minimum residual (ties
    broken by the deterministic edge ordering); the new components are the
    connected parts of the meta-graph restricted to the selected edges.
    Components without any incident inter-edge survive unchanged.

    Merging is pure relabeling: no depth value is read or modified.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.shape != (q.inter_edge_count,):
        raise ValueError("need one residual per inter-edge")
    if not np.all(np.isfinite(residuals)):
        raise ValueError("residuals must be finite")

    count = p.component_count
    if q.inter_edge_count == 0:
        return Partition(p.labels, count, version=p.version + 1)

    # One row per (component, incident edge); pick each component's argmin.
    comp = np.concatenate([q.comp_pairs[:, 0], q.comp_pairs[:, 1]])
    eidx = np.tile(np.arange(q.inter_edge_count), 2)
    res = np.tile(residuals, 2)
    order = np.lexsort((eidx, res, comp))
    comp_sorted = comp[order]
    first = np.searchsorted(comp_sorted, np.arange(count), side="left")
    clipped = np.minimum(first, len(comp_sorted) - 1)
    has_edge = (first < len(comp_sorted)) & (comp_sorted[clipped] == np.arange(count))
    selected = np.unique(eidx[order][first[has_edge]])

    pairs = q.comp_pairs[selected]
    adj = sp.coo_matrix(
        (np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])),
        shape=(count, count),
    )
    _, raw = _cc(adj, directed=False)
    meta_labels, new_count = _canonical_labels(raw)

    labels = np.where(p.labels >= 0, meta_labels[p.labels], -1)
    return Partition(labels, new_count, version=p.version + 1)


def export_labels(p: Partition, width: int, height: int) -> bytes:
    """Serialize labels as little-endian uint32, row-major, with an 8-byte
    (width, height) header; invalid pixels map to 0xFFFFFFFF."""
    head = np.array([width, height], dtype="<u4").tobytes()
    lab = p.labels.astype(np.int64).copy()
    out = np.where(lab < 0, np.int64(INVALID_LABEL), lab).astype("<u4")
    return head + out.tobytes()


def import_labels(blob: bytes) -> tuple[Partition, int, int]:
    """Inverse of :func:`export_labels`."""
    from .errors import MalformedHeader, TruncatedPayload

    if len(blob) < 8:
        raise MalformedHeader("label blob shorter than its header")
    width, height = np.frombuffer(blob[:8], dtype="<u4")
    expect = 8 + 4 * int(width) * int(height)
    if len(blob) < expect:
        raise TruncatedPayload(f"expected {expect} bytes, got {len(blob)}")
    raw = np.frombuffer(blob[8:expect], dtype="<u4").astype(np.int64)
    labels = np.where(raw == int(INVALID_LABEL), -1, raw)
    count = int(labels.max()) + 1 if np.any(labels >= 0) else 0
    return Partition(labels, count), int(width), int(height)
