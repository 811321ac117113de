"""Per-edge continuity coefficients, discontinuity weights, and residuals.

Every undirected pixel edge ``(a, b)`` (with ``a < b`` in row-major order)
carries two directed constraints on log-depth:

    z_a - z_b = omega_to_a        (constraint centered at pixel a)
    z_b - z_a = omega_to_b        (constraint centered at pixel b)

``omega`` is the predicted log-depth ratio across the edge, computed from the
normals under one of two models:

* ``"milano"`` (default): the generic central-camera form built from inner
  products of normals with the pixel rays and the midpoint subpixel ray. It
  is exactly antisymmetric, so ``omega_to_b = -omega_to_a``.
* ``"bini"``: the pinhole finite-difference form. Defined only for
  axis-aligned neighbors, hence restricted to 4-connectivity.

Constraint weights combine a squared ray-alignment factor (low near occluding
contours), a bilateral semi-smoothness weight comparing the two sides of a
pixel, and an optional outlier weight driven by previous residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DegenerateEdge
from .geometry import CameraIntrinsics, NormalMap, ray_at, subpixel_ray
from .graph import PixelGraph

EPS_DEN = 1e-8
EPS_LOG = 1e-12
_LOG_FLOOR = 1e-300  # clamp for |residual| before taking log10

CONTINUITY_MODELS = ("milano", "bini")
REWEIGHTING_MODES = ("off", "soft", "hard")


@dataclass(frozen=True)
class WeightParams:
    """Hyperparameters of the discontinuity and outlier weighting."""

    k: float = 2.0  # sigmoid sharpness of the bilateral weight
    outlier_low: float = 1e-5  # residual magnitude considered an inlier
    outlier_high: float = 1e-3  # residual magnitude considered an outlier
    reweighting_mode: str = "soft"

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not 0 < self.outlier_low < self.outlier_high:
            raise ValueError("need 0 < outlier_low < outlier_high")
        if self.reweighting_mode not in REWEIGHTING_MODES:
            raise ValueError(f"unknown reweighting mode {self.reweighting_mode!r}")


def sigmoid(x, k: float = 1.0):
    """Logistic function 1 / (1 + exp(-k x))."""
    return expit(np.multiply(k, x))


def log_ratio_bini(
    n_a: np.ndarray,
    a_coords: tuple[float, float],
    direction: tuple[int, int],
    intr: CameraIntrinsics,
) -> float:
    """Pinhole log-depth-ratio coefficient for an axis-aligned neighbor.

    ``direction`` is the (du, dv) offset from pixel ``a`` to its neighbor.
    Raises :class:`DegenerateEdge` when the projective denominator vanishes.
    """
    du, dv = direction
    if not ((abs(du) == 1 and dv == 0) or (du == 0 and abs(dv) == 1)):
        raise ValueError("neighbor direction must be axis-aligned and unit")
    n_a = np.asarray(n_a, dtype=np.float64)
    ua, va = a_coords
    if dv == 0:
        f, delta = intr.fx, du * n_a[0]
    else:
        f, delta = intr.fy, dv * n_a[1]
    den = n_a[0] * (ua - intr.cx) + n_a[1] * (va - intr.cy) + n_a[2] * f
    if abs(den) < EPS_DEN:
        raise DegenerateEdge(f"projective denominator {den:.3g} below {EPS_DEN:g}")
    return float(delta / den)


def log_ratio_milano(
    n_a: np.ndarray,
    n_b: np.ndarray,
    tau_a: np.ndarray,
    tau_b: np.ndarray,
    tau_m: np.ndarray,
) -> float:
    """Central-camera log-depth-ratio coefficient from ray inner products."""
    pa = float(np.dot(n_a, tau_a))
    pb = float(np.dot(n_b, tau_b))
    ma = float(np.dot(n_a, tau_m))
    mb = float(np.dot(n_b, tau_m))
    if min(abs(pa), abs(pb), abs(ma), abs(mb)) < EPS_DEN:
        raise DegenerateEdge("normal nearly orthogonal to a ray")
    arg = (ma * pb) / (pa * mb)
    if arg <= EPS_LOG:
        raise DegenerateEdge(f"log argument {arg:.3g} not positive")
    return float(np.log(arg))


def ray_alignment(n_a: np.ndarray, tau_a: np.ndarray, f: float) -> float:
    """Focal-scaled cosine between the normal and the (unit) viewing ray.

    Tends to 0 for pixels near an occluding contour; only its square enters
    the constraint weights, so the absolute value is returned.
    """
    tau_a = np.asarray(tau_a, dtype=np.float64)
    unit = tau_a / np.linalg.norm(tau_a)
    return float(f * abs(np.dot(n_a, unit)))


def bilateral_weight(z_a, z_b, z_opp, gamma: float, k: float) -> float:
    """Semi-smoothness weight comparing the two sides of pixel ``a``.

    ``z_opp`` is the log-depth of the neighbor opposite ``b``; ``None`` when
    that neighbor is missing (image border or masked), in which case there is
    no evidence either way and the weight is 0.5.
    """
    if z_opp is None:
        return 0.5
    g2 = gamma * gamma
    return float(sigmoid(g2 * ((z_opp - z_a) ** 2 - (z_b - z_a) ** 2), k))


def total_edge_weight(gamma, w_bilateral):
    """Overall constraint weight: squared ray alignment times bilateral."""
    return np.square(gamma) * w_bilateral


def outlier_weight(chi_prev, params: WeightParams):
    """Down-weighting of constraints by previous residual magnitude.

    Soft mode maps ``log10 |chi|`` affinely so that the high threshold lands
    at sigmoid(-4) and the low threshold at sigmoid(4); hard mode is a step
    at the high threshold; off returns 1. Accepts scalars or arrays.
    """
    mode = params.reweighting_mode
    mag = np.abs(np.asarray(chi_prev, dtype=np.float64))
    if mode == "off":
        return np.ones_like(mag) if mag.ndim else 1.0
    if mode == "hard":
        out = np.where(mag >= params.outlier_high, 0.0, 1.0)
        return out if mag.ndim else float(out)
    lt = np.log10(params.outlier_low)
    ut = np.log10(params.outlier_high)
    x = 2.0 * np.log10(np.maximum(mag, _LOG_FLOOR)) - (lt + ut)
    out = sigmoid(4.0 / (lt - ut) * x)
    return out if mag.ndim else float(out)


def continuity_residual(z_a, z_b, omega):
    """Residual of the log-depth continuity constraint: z_a - z_b - omega."""
    return z_a - z_b - omega


@dataclass(frozen=True)
class EdgeCoefficients:
    """Vectorized per-edge coefficients for a pixel graph.

    Arrays are indexed like ``graph.edges``; the ``_a`` quantities belong to
    the directed constraint centered at the first endpoint, ``_b`` at the
    second. ``opp_*`` holds the row-major id of the opposite neighbor used by
    the bilateral weight (point reflection through the center pixel), or -1
    when it is missing or invalid.
    """

    edges: np.ndarray
    omega_to_a: np.ndarray
    omega_to_b: np.ndarray
    gamma_a: np.ndarray
    gamma_b: np.ndarray
    opp_a: np.ndarray
    opp_b: np.ndarray
    valid: np.ndarray
    model: str

    @property
    def edge_count(self) -> int:
        return len(self.edges)


def _pixel_coords(ids: np.ndarray, width: int) -> np.ndarray:
    return np.stack([ids % width, ids // width], axis=-1).astype(np.float64)


def _opposite_ids(
    center: np.ndarray, other: np.ndarray, width: int, height: int, mask: np.ndarray
) -> np.ndarray:
    """Point reflection of ``other`` through ``center``; -1 if off-grid or
    masked out."""
    cu, cv = center % width, center // width
    ou, ov = other % width, other // width
    ru, rv = 2 * cu - ou, 2 * cv - ov
    inside = (ru >= 0) & (ru < width) & (rv >= 0) & (rv < height)
    ids = np.where(inside, rv * width + ru, 0)
    ok = inside & mask.ravel()[ids]
    return np.where(ok, ids, -1)


def build_edge_coefficients(
    nmap: NormalMap,
    g: PixelGraph,
    intr: CameraIntrinsics,
    model: str = "milano",
) -> EdgeCoefficients:
    """Evaluate continuity coefficients and alignment factors for all edges.

    Degenerate edges (grazing normals, non-positive log argument, or
    diagonal edges under the pinhole model) are flagged invalid; they carry
    zero coefficients and receive zero weight everywhere downstream.
    """
    if model not in CONTINUITY_MODELS:
        raise ValueError(f"unknown continuity model {model!r}")
    w, h = g.width, g.height
    flat_n = nmap.normals.reshape(-1, 3)
    a_ids, b_ids = g.edges[:, 0], g.edges[:, 1]
    n_a, n_b = flat_n[a_ids], flat_n[b_ids]
    ca, cb = _pixel_coords(a_ids, w), _pixel_coords(b_ids, w)

    tau_a = ray_at(intr, ca[:, 0], ca[:, 1])
    tau_b = ray_at(intr, cb[:, 0], cb[:, 1])

    if model == "milano":
        tau_m = subpixel_ray(intr, ca, cb)
        pa = np.einsum("ij,ij->i", n_a, tau_a)
        pb = np.einsum("ij,ij->i", n_b, tau_b)
        ma = np.einsum("ij,ij->i", n_a, tau_m)
        mb = np.einsum("ij,ij->i", n_b, tau_m)
        smallest = np.minimum(
            np.minimum(np.abs(pa), np.abs(pb)), np.minimum(np.abs(ma), np.abs(mb))
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            arg = (ma * pb) / (pa * mb)
        valid = (smallest >= EPS_DEN) & (arg > EPS_LOG)
        omega = np.zeros(len(a_ids))
        omega[valid] = np.log(arg[valid])
        omega_to_a, omega_to_b = omega, -omega
    else:
        du = cb[:, 0] - ca[:, 0]
        dv = cb[:, 1] - ca[:, 1]
        horizontal = dv == 0
        axis = np.abs(du) + np.abs(dv) == 1
        f_dir = np.where(horizontal, intr.fx, intr.fy)
        delta_a = np.where(horizontal, du * n_a[:, 0], dv * n_a[:, 1])
        delta_b = np.where(horizontal, -du * n_b[:, 0], -dv * n_b[:, 1])
        den_a = (
            n_a[:, 0] * (ca[:, 0] - intr.cx)
            + n_a[:, 1] * (ca[:, 1] - intr.cy)
            + n_a[:, 2] * f_dir
        )
        den_b = (
            n_b[:, 0] * (cb[:, 0] - intr.cx)
            + n_b[:, 1] * (cb[:, 1] - intr.cy)
            + n_b[:, 2] * f_dir
        )
        valid = axis & (np.abs(den_a) >= EPS_DEN) & (np.abs(den_b) >= EPS_DEN)
        omega_to_a = np.where(valid, delta_a / np.where(valid, den_a, 1.0), 0.0)
        omega_to_b = np.where(valid, delta_b / np.where(valid, den_b, 1.0), 0.0)

    f_mean = intr.mean_focal
    unit_a = tau_a / np.linalg.norm(tau_a, axis=1, keepdims=True)
    unit_b = tau_b / np.linalg.norm(tau_b, axis=1, keepdims=True)
    gamma_a = f_mean * np.abs(np.einsum("ij,ij->i", n_a, unit_a))
    gamma_b = f_mean * np.abs(np.einsum("ij,ij->i", n_b, unit_b))

    opp_a = _opposite_ids(a_ids, b_ids, w, h, nmap.mask)
    opp_b = _opposite_ids(b_ids, a_ids, w, h, nmap.mask)

    return EdgeCoefficients(
        edges=g.edges,
        omega_to_a=omega_to_a,
        omega_to_b=omega_to_b,
        gamma_a=gamma_a,
        gamma_b=gamma_b,
        opp_a=opp_a,
        opp_b=opp_b,
        valid=valid,
        model=model,
    )


def bilateral_weights(
    coeffs: EdgeCoefficients,
    z_flat: np.ndarray,
    k: float,
    edge_ids: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Bilateral weights for both directions of every edge at log-depth state
    ``z_flat`` (flattened full grid). ``edge_ids`` restricts the evaluation
    to a subset of edges."""

    def one_side(center, other, opposite, gamma):
        d_other = z_flat[other] - z_flat[center]
        has_opp = opposite >= 0
        d_opp = np.where(has_opp, z_flat[np.maximum(opposite, 0)] - z_flat[center], 0.0)
        g2 = gamma * gamma
        w = sigmoid(g2 * (d_opp**2 - d_other**2), k)
        return np.where(has_opp, w, 0.5)

    sel = slice(None) if edge_ids is None else edge_ids
    a, b = coeffs.edges[sel, 0], coeffs.edges[sel, 1]
    w_to_a = one_side(a, b, coeffs.opp_a[sel], coeffs.gamma_a[sel])
    w_to_b = one_side(b, a, coeffs.opp_b[sel], coeffs.gamma_b[sel])
    return w_to_a, w_to_b


def edge_weights(
    coeffs: EdgeCoefficients,
    z_flat: np.ndarray,
    k: float,
    edge_ids: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Total constraint weights (alignment squared times bilateral) for both
    directions; invalid edges get exactly zero."""
    w_to_a, w_to_b = bilateral_weights(coeffs, z_flat, k, edge_ids)
    sel = slice(None) if edge_ids is None else edge_ids
    valid = coeffs.valid[sel]
    return (
        np.where(valid, total_edge_weight(coeffs.gamma_a[sel], w_to_a), 0.0),
        np.where(valid, total_edge_weight(coeffs.gamma_b[sel], w_to_b), 0.0),
    )


def edge_residuals(coeffs: EdgeCoefficients, z_flat: np.ndarray) -> np.ndarray:
    """Continuity residual per undirected edge, in the stored orientation
    (centered at the smaller-id endpoint)."""
    a, b = coeffs.edges[:, 0], coeffs.edges[:, 1]
    return continuity_residual(z_flat[a], z_flat[b], coeffs.omega_to_a)
