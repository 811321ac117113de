"""Camera model, normal-map container, ray fields, and (log-)depth maps.

Conventions used throughout the package:

* The camera looks down +z. A pixel (u, v) has ray direction
  tau(u, v) = ((u - cx) / fx, (v - cy) / fy, 1), i.e. rays are normalized to
  unit z-component. Depth z is the z-coordinate of the surface point, so the
  3D point is p = z * tau.
* Visible surface normals satisfy n . tau < 0 (they face the camera).
* Log-depth maps store the natural logarithm of depth.

All containers are immutable after construction (their arrays are marked
read-only), so they can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIT_NORM_TOL = 1e-4


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not all(np.isfinite([self.fx, self.fy, self.cx, self.cy])):
            raise ValueError("intrinsics must be finite")

    @property
    def mean_focal(self) -> float:
        return 0.5 * (self.fx + self.fy)


def ray_at(intr: CameraIntrinsics, u, v) -> np.ndarray:
    """Ray direction through pixel (u, v), z-component fixed to 1.

    Accepts scalars or arrays; the result has a trailing axis of length 3.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = (u - intr.cx) / intr.fx
    y = (v - intr.cy) / intr.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def subpixel_ray(intr: CameraIntrinsics, a, b) -> np.ndarray:
    """Ray through the coordinate midpoint of pixels a and b.

    ``a`` and ``b`` are (u, v) pairs (or arrays of them with shape (..., 2)).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mid = 0.5 * (a + b)
    return ray_at(intr, mid[..., 0], mid[..., 1])


@dataclass(frozen=True)
class RayField:
    """Per-pixel ray directions for a full image grid."""

    intrinsics: CameraIntrinsics
    rays: np.ndarray  # (H, W, 3), z-component 1

    @classmethod
    def build(cls, intr: CameraIntrinsics, width: int, height: int) -> "RayField":
        u, v = np.meshgrid(np.arange(width), np.arange(height))
        return cls(intr, _frozen(ray_at(intr, u, v)))

    @property
    def unit_rays(self) -> np.ndarray:
        r = self.rays
        return r / np.linalg.norm(r, axis=-1, keepdims=True)


@dataclass(frozen=True)
class NormalMap:
    """Per-pixel unit normals in camera coordinates plus a validity mask.

    Invalid pixels carry an all-zero sentinel normal and never participate in
    any graph or solve.
    """

    normals: np.ndarray  # (H, W, 3) float64
    mask: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.normals.shape[0]

    @property
    def width(self) -> int:
        return self.normals.shape[1]

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.mask))

    @classmethod
    def create(cls, normals: np.ndarray, mask: np.ndarray | None = None) -> "NormalMap":
        """Validate and renormalize input normals.

        Valid normals must have Euclidean norm within ``UNIT_NORM_TOL`` of 1;
        they are renormalized to exactly unit length. Anything further from
        the unit sphere is rejected.
        """
        normals = np.asarray(normals, dtype=np.float64)
        if normals.ndim != 3 or normals.shape[2] != 3:
            raise ValueError("normals must have shape (H, W, 3)")
        if mask is None:
            mask = np.ones(normals.shape[:2], dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != normals.shape[:2]:
            raise ValueError("mask shape does not match normals")
        if not np.all(np.isfinite(normals[mask])):
            raise ValueError("valid normals must be finite")

        norms = np.linalg.norm(normals, axis=2)
        bad = mask & (np.abs(norms - 1.0) > UNIT_NORM_TOL)
        if np.any(bad):
            worst = float(np.max(np.abs(norms[bad] - 1.0)))
            raise ValueError(
                f"{int(bad.sum())} valid normals deviate from unit norm by up "
                f"to {worst:.3g} (tolerance {UNIT_NORM_TOL:g})"
            )
        out = np.zeros_like(normals)
        safe = norms[mask]
        out[mask] = normals[mask] / safe[:, None]
        return cls(_frozen(out), _frozen(mask))

    def flipped(self) -> "NormalMap":
        """Return the map with all valid normals negated (opposite sign
        convention)."""
        out = np.where(self.mask[..., None], -self.normals, 0.0)
        return NormalMap(_frozen(out), self.mask)


@dataclass(frozen=True)
class LogDepthMap:
    """Per-pixel natural-log depth sharing the normal map's mask."""

    values: np.ndarray  # (H, W) float64; 0 outside the mask
    mask: np.ndarray  # (H, W) bool

    @classmethod
    def zeros(cls, mask: np.ndarray) -> "LogDepthMap":
        mask = np.asarray(mask, dtype=bool)
        return cls(_frozen(np.zeros(mask.shape, dtype=np.float64)), _frozen(mask))

    @classmethod
    def from_values(cls, values: np.ndarray, mask: np.ndarray) -> "LogDepthMap":
        values = np.asarray(values, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("valid log-depth entries must be finite")
        out = np.where(mask, values, 0.0)
        return cls(_frozen(out), _frozen(mask))

    def shifted(self, offset: float) -> "LogDepthMap":
        out = np.where(self.mask, self.values + offset, 0.0)
        return LogDepthMap(_frozen(out), self.mask)


def depth_from_logdepth(zmap: LogDepthMap) -> np.ndarray:
    """Elementwise exponential of the log-depth; invalid pixels become 0."""
    out = np.zeros_like(zmap.values)
    out[zmap.mask] = np.exp(zmap.values[zmap.mask])
    return out


def logdepth_from_depth(depth: np.ndarray, mask: np.ndarray) -> LogDepthMap:
    """Inverse of :func:`depth_from_logdepth` for positive depth maps."""
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if np.any(depth[mask] <= 0):
        raise ValueError("depth must be positive on valid pixels")
    vals = np.zeros_like(depth)
    vals[mask] = np.log(depth[mask])
    return LogDepthMap.from_values(vals, mask)
