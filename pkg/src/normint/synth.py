"""Analytic test scenes: pixel-exact normals, ground-truth depth, masks.

Every scene is rendered by intersecting each pixel ray with an analytic
surface and evaluating the surface normal at the hit point from the surface
gradient, never by finite differences of the depth map. Depth is the
z-coordinate of the hit (rays have unit z-component).

Scene kinds
-----------
fronto_plane     constant-depth plane.
slanted_plane    plane z = depth + slope_x * x + slope_y * y.
sphere_patch     visible cap of a sphere, cut at a maximum surface tilt.
sphere_on_plane  spherical bump attached to a background plane. The sphere
                 center sits ``sink`` behind the plane, so the surface is
                 connected along the junction circle; viewed off-axis, the
                 far side of the bump self-occludes (a genuine depth
                 discontinuity) while the near side of the junction stays
                 visible, providing a continuous path between the two
                 regions. This is the discontinuity-recovery test scene.
step_planes      two fronto-parallel planes split down the middle; identical
                 normals across a depth step, the classic ill-posed case.
sine_relief      doubly periodic relief z = depth + A sin(fx x) sin(fy y),
                 intersected by Newton iteration to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateSpec
from .geometry import CameraIntrinsics, NormalMap

SCENE_KINDS = (
    "fronto_plane",
    "slanted_plane",
    "sphere_patch",
    "sphere_on_plane",
    "step_planes",
    "sine_relief",
)


def default_intrinsics(width: int, height: int) -> CameraIntrinsics:
    f = 0.75 * max(width, height)
    return CameraIntrinsics(fx=f, fy=f, cx=(width - 1) / 2, cy=(height - 1) / 2)


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of an analytic scene; unused fields are ignored per kind.

    ``radius``, ``sink`` and ``center_x`` default per kind when left None:
    the sphere patch is a large centered cap, while the bump of
    ``sphere_on_plane`` sits off-axis with its center half a radius behind
    the plane. That default bump meets the plane at a moderate junction
    angle (60 degrees) whose near side stays visible while the far side
    self-occludes behind the silhouette.
    """

    kind: str
    width: int = 128
    height: int = 128
    intrinsics: CameraIntrinsics | None = None
    depth: float = 2.0  # base / background depth
    slope_x: float = 0.4  # slanted_plane: dz/dx
    slope_y: float = -0.25  # slanted_plane: dz/dy
    radius: float | None = None  # spheres; None = kind default
    center_x: float | None = None  # sphere lateral offset; None = kind default
    center_y: float = 0.0
    max_tilt_deg: float = 70.0  # sphere_patch: max angle between -n and the ray
    sink: float | None = None  # sphere_on_plane: center behind the plane
    step_depths: tuple[float, float] = (1.0, 2.0)
    amplitude: float = 0.08  # sine_relief
    freq_x: float = 4.0
    freq_y: float = 5.0

    def camera(self) -> CameraIntrinsics:
        return self.intrinsics or default_intrinsics(self.width, self.height)

    def resolved(self) -> "SceneSpec":
        """Fill kind-specific defaults for fields left as None."""
        radius = self.radius
        if radius is None:
            radius = 0.45 if self.kind == "sphere_on_plane" else 0.8
        sink = self.sink if self.sink is not None else 0.5 * radius
        center_x = self.center_x
        if center_x is None:
            center_x = 0.65 if self.kind == "sphere_on_plane" else 0.0
        return replace(self, radius=radius, sink=sink, center_x=center_x)


@dataclass(frozen=True)
class RenderedScene:
    normal_map: NormalMap
    depth: np.ndarray  # (H, W); 0 outside the mask
    mask: np.ndarray
    regions: np.ndarray  # (H, W) int8 surface index; -1 outside the mask
    intrinsics: CameraIntrinsics
    spec: SceneSpec

    @property
    def mean_depth(self) -> float:
        return float(np.mean(self.depth[self.mask]))


def _grid_dirs(spec: SceneSpec, intr: CameraIntrinsics):
    u, v = np.meshgrid(np.arange(spec.width), np.arange(spec.height))
    x = (u - intr.cx) / intr.fx
    y = (v - intr.cy) / intr.fy
    return x, y


def _normalize(vectors: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return vectors / np.where(norm > 0, norm, 1.0)


def _finish(spec, intr, depth, normals, mask, regions) -> RenderedScene:
    if not mask.any():
        raise DegenerateSpec(f"scene {spec.kind!r} renders no valid pixel")
    depth = np.where(mask, depth, 0.0)
    regions = np.where(mask, regions, -1).astype(np.int8)
    nmap = NormalMap.create(np.where(mask[..., None], normals, 0.0), mask)
    return RenderedScene(nmap, depth, mask, regions, intr, spec)


def _render_plane(spec: SceneSpec, intr) -> RenderedScene:
    x, y = _grid_dirs(spec, intr)
    if spec.depth <= 0:
        raise DegenerateSpec("plane depth must be positive")
    if spec.kind == "fronto_plane":
        den = np.ones_like(x)
        normal = np.array([0.0, 0.0, -1.0])
    else:
        den = 1.0 - spec.slope_x * x - spec.slope_y * y
        normal = np.array([spec.slope_x, spec.slope_y, -1.0])
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = spec.depth / den
    mask = (den > 1e-9) & np.isfinite(depth) & (depth > 0)
    normals = np.broadcast_to(
        _normalize(normal), (spec.height, spec.width, 3)
    ).copy()
    return _finish(spec, intr, depth, normals, mask, np.zeros_like(depth, dtype=np.int8))


def _sphere_nearest_hit(x, y, center, radius):
    """Smallest positive ray parameter t with |t*(x,y,1) - center| = radius.

    Returns (t, hit) arrays; t is meaningful only where hit is True. The
    parameter t equals the depth of the hit because rays have unit z.
    """
    d2 = x * x + y * y + 1.0
    dc = x * center[0] + y * center[1] + center[2]
    disc = dc * dc - d2 * (np.dot(center, center) - radius * radius)
    safe = np.maximum(disc, 0.0)
    t = (dc - np.sqrt(safe)) / d2
    hit = (disc >= 0) & (t > 0)
    return t, hit


def _render_sphere_patch(spec: SceneSpec, intr) -> RenderedScene:
    center = np.array([spec.center_x, spec.center_y, spec.depth])
    if spec.radius <= 0:
        raise DegenerateSpec("sphere radius must be positive")
    if spec.depth <= spec.radius:
        raise DegenerateSpec("sphere reaches behind the camera")
    x, y = _grid_dirs(spec, intr)
    t, hit = _sphere_nearest_hit(x, y, center, spec.radius)
    px, py, pz = t * x, t * y, t
    normals = np.stack(
        [(px - center[0]), (py - center[1]), (pz - center[2])], axis=-1
    ) / spec.radius
    # Cut the rim: keep pixels whose surface tilt against the viewing ray
    # stays below the cap angle (avoids grazing normals at the silhouette).
    ray = _normalize(np.stack([x, y, np.ones_like(x)], axis=-1))
    cos_view = -np.einsum("hwc,hwc->hw", normals, ray)
    mask = hit & (cos_view >= np.cos(np.deg2rad(spec.max_tilt_deg)))
    return _finish(spec, intr, t, normals, mask, np.zeros_like(t, dtype=np.int8))


def _render_sphere_on_plane(spec: SceneSpec, intr) -> RenderedScene:
    if spec.radius <= 0:
        raise DegenerateSpec("sphere radius must be positive")
    if not 0.0 <= spec.sink < spec.radius:
        raise DegenerateSpec("sink must lie in [0, radius)")
    if spec.depth <= 0:
        raise DegenerateSpec("plane depth must be positive")
    center = np.array([spec.center_x, spec.center_y, spec.depth + spec.sink])
    x, y = _grid_dirs(spec, intr)
    t, hit = _sphere_nearest_hit(x, y, center, spec.radius)
    # The bump is the sphere part protruding in front of the plane. A nearest
    # hit behind the plane is buried; those rays see the plane instead.
    on_bump = hit & (t <= spec.depth)
    depth = np.where(on_bump, t, spec.depth)
    px, py, pz = depth * x, depth * y, depth
    sphere_n = np.stack(
        [(px - center[0]), (py - center[1]), (pz - center[2])], axis=-1
    ) / spec.radius
    plane_n = np.broadcast_to(
        np.array([0.0, 0.0, -1.0]), sphere_n.shape
    )
    normals = np.where(on_bump[..., None], sphere_n, plane_n)
    mask = depth > 0
    if not on_bump.any():
        raise DegenerateSpec("bump is not visible in the image")
    regions = on_bump.astype(np.int8)
    return _finish(spec, intr, depth, normals, mask, regions)


def _render_step_planes(spec: SceneSpec, intr) -> RenderedScene:
    near, far = spec.step_depths
    if near <= 0 or far <= 0:
        raise DegenerateSpec("step depths must be positive")
    x, y = _grid_dirs(spec, intr)
    u = np.arange(spec.width)[None, :].repeat(spec.height, axis=0)
    left = u < spec.width // 2
    depth = np.where(left, near, far)
    normals = np.broadcast_to(
        np.array([0.0, 0.0, -1.0]), (spec.height, spec.width, 3)
    ).copy()
    regions = (~left).astype(np.int8)
    return _finish(spec, intr, depth, normals, np.ones_like(left), regions)


def _render_sine_relief(spec: SceneSpec, intr) -> RenderedScene:
    if spec.depth <= 0:
        raise DegenerateSpec("base depth must be positive")
    x, y = _grid_dirs(spec, intr)
    a, fx, fy = spec.amplitude, spec.freq_x, spec.freq_y

    def g(px, py):
        return spec.depth + a * np.sin(fx * px) * np.sin(fy * py)

    def grad(px, py):
        gx = a * fx * np.cos(fx * px) * np.sin(fy * py)
        gy = a * fy * np.sin(fx * px) * np.cos(fy * py)
        return gx, gy

    t = np.full_like(x, spec.depth)
    for _ in range(60):
        f_val = t - g(t * x, t * y)
        gx, gy = grad(t * x, t * y)
        f_prime = 1.0 - (gx * x + gy * y)
        update = f_val / np.where(np.abs(f_prime) > 1e-9, f_prime, 1.0)
        t = t - update
        if np.max(np.abs(update)) < 1e-14 * spec.depth:
            break
    converged = np.abs(t - g(t * x, t * y)) < 1e-10 * spec.depth
    gx, gy = grad(t * x, t * y)
    normals = _normalize(np.stack([gx, gy, -np.ones_like(gx)], axis=-1))
    facing = gx * x + gy * y - 1.0 < 0
    mask = converged & facing & (t > 0)
    return _finish(spec, intr, t, normals, mask, np.zeros_like(t, dtype=np.int8))


_RENDERERS = {
    "fronto_plane": _render_plane,
    "slanted_plane": _render_plane,
    "sphere_patch": _render_sphere_patch,
    "sphere_on_plane": _render_sphere_on_plane,
    "step_planes": _render_step_planes,
    "sine_relief": _render_sine_relief,
}


def render_scene(spec: SceneSpec) -> RenderedScene:
    """Render a scene spec into normals, ground-truth depth, mask, regions."""
    if spec.kind not in _RENDERERS:
        raise DegenerateSpec(f"unknown scene kind {spec.kind!r}")
    if spec.width < 2 or spec.height < 2:
        raise DegenerateSpec("image must be at least 2x2")
    spec = spec.resolved()
    return _RENDERERS[spec.kind](spec, spec.camera())


def at_resolution(spec: SceneSpec, width: int, height: int) -> SceneSpec:
    """Same scene geometry sampled on a different grid.

    Scales the principal point and focal lengths so the field of view (and
    therefore the world-space footprint) is preserved.
    """
    base = spec.camera()
    sx = width / spec.width
    sy = height / spec.height
    intr = CameraIntrinsics(
        fx=base.fx * sx,
        fy=base.fy * sy,
        cx=(base.cx + 0.5) * sx - 0.5,
        cy=(base.cy + 0.5) * sy - 0.5,
    )
    return replace(spec, width=width, height=height, intrinsics=intr)


def perturb_normals(nmap: NormalMap, angle_sigma: float, seed: int) -> NormalMap:
    """Tilt every valid normal by |N(0, sigma)| radians in a random tangent
    direction. Deterministic for a fixed seed."""
    if angle_sigma < 0:
        raise ValueError("angle_sigma must be non-negative")
    if angle_sigma == 0:
        return nmap
    rng = np.random.default_rng(seed)
    mask = nmap.mask
    n = nmap.normals[mask]
    count = len(n)
    angles = np.abs(rng.normal(0.0, angle_sigma, size=count))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=count)

    # Orthonormal tangent basis per normal; rotation about an axis in the
    # tangent plane tilts the normal by exactly the drawn angle.
    helper = np.where(
        (np.abs(n[:, 0]) < 0.9)[:, None],
        np.array([1.0, 0.0, 0.0]),
        np.array([0.0, 1.0, 0.0]),
    )
    e1 = _normalize(np.cross(n, helper))
    e2 = np.cross(n, e1)
    axis = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
    tilted = (
        np.cos(angles)[:, None] * n + np.sin(angles)[:, None] * np.cross(axis, n)
    )
    out = np.zeros_like(nmap.normals)
    out[mask] = _normalize(tilted)
    return NormalMap.create(out, mask)
