"""Sparse weighted least-squares assembly and conjugate-gradient solves.

Systems are built over directed constraints: each undirected edge contributes
two rows (one per direction), interleaved in edge order. Every row has
exactly one +1 and one -1 entry; the diagonal weight matrix carries the
constraint weights. Solves go through conjugate gradient on the normal
equations, started from zero so iterates stay orthogonal to the constant
null space of the design matrix.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg as _scipy_cg

from .continuity import EdgeCoefficients, WeightParams, edge_weights, outlier_weight
from .errors import NoInterEdges
from .geometry import LogDepthMap
from .graph import Partition, PixelGraph, QuotientGraph, intra_edge_ids


@dataclass(frozen=True)
class SolveSettings:
    """Runtime parameters of the solver and the outer optimization loop."""

    cg_tol: float = 1e-6  # relative residual tolerance of CG
    cg_max_iters: int = 5000  # lower bound; actual cap is max(this, unknowns)
    delta_e_max: float = 1e-3  # relative energy change declaring convergence
    max_iters: int = 150  # hard cap on outer iterations
    alignment_iters: int = 2  # leading iterations with uniform weights
    freq_merging: int | None = None  # iterations between merges; None = off
    worker_count: int = 4  # parallel component fills
    refill_reweighted: bool = False  # one extra fill pass with updated weights

    def __post_init__(self):
        if not self.cg_tol > 0:
            raise ValueError("cg_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.alignment_iters < 0:
            raise ValueError("alignment_iters must be non-negative")
        if self.freq_merging is not None and self.freq_merging < 1:
            raise ValueError("freq_merging must be at least 1 when set")
        if self.worker_count < 1:
            raise ValueError("worker_count must be at least 1")


@dataclass(frozen=True)
class EdgeSystem:
    """Weighted sparse system A x = b with one +1/-1 pair per row."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    weights: np.ndarray

    @property
    def row_count(self) -> int:
        return self.matrix.shape[0]

    @property
    def column_count(self) -> int:
        return self.matrix.shape[1]


def _pair_system(
    cols_a: np.ndarray,
    cols_b: np.ndarray,
    rhs_a: np.ndarray,
    rhs_b: np.ndarray,
    w_a: np.ndarray,
    w_b: np.ndarray,
    n_cols: int,
) -> EdgeSystem:
    """Interleave the two directed rows of every edge into one system."""
    k = len(cols_a)
    rows = np.repeat(np.arange(2 * k), 2)
    cols = np.empty(4 * k, dtype=np.int64)
    data = np.empty(4 * k, dtype=np.float64)
    # row 2i:   +1 at cols_a, -1 at cols_b   (constraint centered at a)
    # row 2i+1: +1 at cols_b, -1 at cols_a
    cols[0::4], cols[1::4] = cols_a, cols_b
    cols[2::4], cols[3::4] = cols_b, cols_a
    data[0::4], data[1::4] = 1.0, -1.0
    data[2::4], data[3::4] = 1.0, -1.0
    mat = sp.csr_matrix((data, (rows, cols)), shape=(2 * k, n_cols))
    rhs = np.empty(2 * k)
    rhs[0::2], rhs[1::2] = rhs_a, rhs_b
    weights = np.empty(2 * k)
    weights[0::2], weights[1::2] = w_a, w_b
    return EdgeSystem(mat, rhs, weights)


def cg_normal_equations(
    system: EdgeSystem, settings: SolveSettings
) -> tuple[np.ndarray, bool]:
    """Solve min ||W^(1/2) (A x - b)|| via CG on A^T W A x = A^T W b.

    Returns the solution and a flag that is False when CG hit its iteration
    cap before reaching the tolerance (the best iterate is still returned).
    """
    n = system.column_count
    if n == 0 or system.row_count == 0:
        return np.zeros(n), True
    a = system.matrix
    wdiag = sp.diags(system.weights)
    normal = (a.T @ wdiag @ a).tocsr()
    rhs = a.T @ (system.weights * system.rhs)
    if not np.any(rhs):
        return np.zeros(n), True
    x, info = _scipy_cg(
        normal,
        rhs,
        x0=np.zeros(n),
        rtol=settings.cg_tol,
        atol=0.0,
        maxiter=max(settings.cg_max_iters, n),
    )
    return x, info == 0


def assemble_intra(
    pixels: np.ndarray,
    edge_ids: np.ndarray,
    coeffs: EdgeCoefficients,
    z_flat: np.ndarray,
    params: WeightParams,
) -> EdgeSystem:
    """System over one component's pixels for its internal edges.

    Columns are positions in ``pixels`` (which must be sorted ascending).
    Weights are the total edge weights evaluated at ``z_flat``; at the
    initial fill that state is all zeros, making every bilateral factor 0.5.
    """
    w_a, w_b = edge_weights(coeffs, z_flat, params.k, edge_ids)
    e = coeffs.edges[edge_ids]
    cols_a = np.searchsorted(pixels, e[:, 0])
    cols_b = np.searchsorted(pixels, e[:, 1])
    return _pair_system(
        cols_a,
        cols_b,
        coeffs.omega_to_a[edge_ids],
        coeffs.omega_to_b[edge_ids],
        w_a,
        w_b,
        len(pixels),
    )


def assemble_inter(
    q: QuotientGraph,
    coeffs: EdgeCoefficients,
    z_flat: np.ndarray,
    weights_to_a: np.ndarray,
    weights_to_b: np.ndarray,
) -> EdgeSystem:
    """Relative-scale system over components for the inter-component edges.

    Row right-hand sides are the continuity coefficients minus the current
    log-depth differences, so the unknown scales absorb what the depth state
    does not already explain.
    """
    if q.inter_edge_count == 0:
        raise NoInterEdges("quotient graph has no inter-component edges")
    a, b = q.inter_edges[:, 0], q.inter_edges[:, 1]
    dz = z_flat[a] - z_flat[b]
    rhs_a = coeffs.omega_to_a[q.edge_ids] - dz
    rhs_b = coeffs.omega_to_b[q.edge_ids] - (z_flat[b] - z_flat[a])
    return _pair_system(
        q.comp_pairs[:, 0],
        q.comp_pairs[:, 1],
        rhs_a,
        rhs_b,
        weights_to_a,
        weights_to_b,
        q.component_count,
    )


def _grouped_intra_edges(
    g: PixelGraph, p: Partition
) -> tuple[np.ndarray, np.ndarray]:
    """Intra-edge ids sorted by component label plus per-component bounds."""
    iid = intra_edge_ids(g, p)
    lab = p.labels[g.edges[iid, 0]]
    order = np.argsort(lab, kind="stable")
    iid = iid[order]
    bounds = np.searchsorted(lab[order], np.arange(p.component_count + 1))
    return iid, bounds


def fill_components(
    p: Partition,
    g: PixelGraph,
    coeffs: EdgeCoefficients,
    params: WeightParams,
    settings: SolveSettings,
) -> tuple[np.ndarray, list[str]]:
    """Reconstruct every component independently from zero log-depth.

    Returns the flattened full-grid log-depth (zeros outside the mask and for
    single-pixel components) and a list of warnings from solves that hit the
    CG iteration cap. Components never share unknowns, so solves are
    independent and are dispatched to a thread pool.
    """
    z = np.zeros(g.width * g.height)
    iid, bounds = _grouped_intra_edges(g, p)
    warnings: list[str] = []

    def solve_one(c: int, z_state: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
        pixels = p.pixels_of(c)
        edge_ids = iid[bounds[c]:bounds[c + 1]]
        system = assemble_intra(pixels, edge_ids, coeffs, z_state, params)
        x, ok = cg_normal_equations(system, settings)
        return pixels, x, ok

    todo = [c for c in range(p.component_count) if p.sizes[c] > 1]

    def run_pass(z_state: np.ndarray) -> np.ndarray:
        if settings.worker_count == 1 or len(todo) < 2:
            outcomes = [solve_one(c, z_state) for c in todo]
        else:
            with ThreadPoolExecutor(max_workers=settings.worker_count) as pool:
                futures = [pool.submit(solve_one, c, z_state) for c in todo]
                outcomes = [f.result() for f in futures]
        out = z_state.copy()
        for c, (pixels, x, ok) in zip(todo, outcomes):
            out[pixels] = x
            if not ok:
                warnings.append(f"component {c}: cg hit iteration cap")
        return out

    z = run_pass(z)
    if settings.refill_reweighted:
        z = run_pass(z)
    return z, warnings


@dataclass(frozen=True)
class ScaleStep:
    """Outcome of one relative-scale iteration."""

    scales: np.ndarray  # one log-scale per component
    energy: float  # weighted squared residual after applying the scales
    residual: np.ndarray  # per-row residual A s - b (post-apply residuals)
    weights: np.ndarray  # per-row weights used in this iteration
    cg_converged: bool


def build_inter_weights(
    q: QuotientGraph,
    coeffs: EdgeCoefficients,
    z_flat: np.ndarray,
    t: int,
    settings: SolveSettings,
    params: WeightParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Directed inter-edge weights for iteration ``t``.

    The first ``alignment_iters`` iterations weight every usable constraint
    equally; afterwards the bilateral/alignment weight and the outlier weight
    (from the residuals of the previous state) apply. Edges with degenerate
    coefficients always get zero.
    """
    valid = coeffs.valid[q.edge_ids]
    if t < settings.alignment_iters:
        uniform = valid.astype(np.float64)
        return uniform, uniform.copy()
    w_a, w_b = edge_weights(coeffs, z_flat, params.k, q.edge_ids)
    a, b = q.inter_edges[:, 0], q.inter_edges[:, 1]
    chi_a = z_flat[a] - z_flat[b] - coeffs.omega_to_a[q.edge_ids]
    chi_b = z_flat[b] - z_flat[a] - coeffs.omega_to_b[q.edge_ids]
    w_a = w_a * outlier_weight(chi_a, params)
    w_b = w_b * outlier_weight(chi_b, params)
    return np.where(valid, w_a, 0.0), np.where(valid, w_b, 0.0)


def relative_scale_step(
    q: QuotientGraph,
    p: Partition,
    z_flat: np.ndarray,
    t: int,
    settings: SolveSettings,
    params: WeightParams,
    coeffs: EdgeCoefficients,
) -> ScaleStep:
    """Solve for per-component log-scales at iteration ``t``.

    With no inter-component edges there is nothing to align: returns zero
    scales and zero energy.
    """
    if q.inter_edge_count == 0:
        zeros = np.zeros(p.component_count)
        return ScaleStep(zeros, 0.0, np.zeros(0), np.zeros(0), True)
    w_a, w_b = build_inter_weights(q, coeffs, z_flat, t, settings, params)
    system = assemble_inter(q, coeffs, z_flat, w_a, w_b)
    scales, ok = cg_normal_equations(system, settings)
    residual = system.matrix @ scales - system.rhs
    energy = float(residual @ (system.weights * residual))
    return ScaleStep(scales, energy, residual, system.weights, ok)


def apply_scales(zmap: LogDepthMap, p: Partition, scales: np.ndarray) -> LogDepthMap:
    """Shift every pixel's log-depth by its component's log-scale."""
    if len(scales) != p.component_count:
        raise ValueError("one scale per component required")
    flat = zmap.values.ravel().copy()
    valid = p.labels >= 0
    flat[valid] += scales[p.labels[valid]]
    return LogDepthMap.from_values(flat.reshape(zmap.values.shape), zmap.mask)
