"""File formats: PFM float images, 16-bit PNG normals, masks, labels, JSON.

PFM convention: ``PF`` (3-channel) or ``Pf`` (1-channel) magic, ASCII width
and height, a scale line whose sign encodes endianness (negative = little
endian; we always write -1.0), then float32 scanlines stored bottom-up.
Round trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np

from .errors import (
    MalformedHeader,
    NormintError,
    TruncatedPayload,
    UnsupportedBitDepth,
)
from .geometry import CameraIntrinsics, NormalMap
from .graph import Partition, export_labels, import_labels


def write_pfm(path, image: np.ndarray) -> None:
    """Write a (H, W) or (H, W, 3) float image as little-endian PFM."""
    image = np.asarray(image)
    if image.ndim == 2:
        magic = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError("PFM supports (H, W) or (H, W, 3) images")
    h, w = image.shape[:2]
    payload = np.flipud(image).astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(payload)


def read_pfm(path) -> np.ndarray:
    """Read a PFM file; returns float32, (H, W) or (H, W, 3), top-down rows."""
    with open(path, "rb") as fh:
        data = fh.read()

    def next_token(pos: int) -> tuple[bytes, int]:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeader(f"{path}: incomplete PFM header")
        return data[start:pos], pos

    magic, pos = next_token(0)
    if magic == b"PF":
        channels = 3
    elif magic == b"Pf":
        channels = 1
    else:
        raise MalformedHeader(f"{path}: not a PFM file (magic {magic!r})")
    try:
        wtok, pos = next_token(pos)
        htok, pos = next_token(pos)
        stok, pos = next_token(pos)
        w, h, scale = int(wtok), int(htok), float(stok)
    except ValueError as exc:
        raise MalformedHeader(f"{path}: bad PFM dimensions or scale") from exc
    if w <= 0 or h <= 0 or scale == 0:
        raise MalformedHeader(f"{path}: bad PFM dimensions or scale")
    pos += 1  # exactly one whitespace byte separates header and payload
    count = w * h * channels
    dtype = "<f4" if scale < 0 else ">f4"
    payload = data[pos : pos + 4 * count]
    if len(payload) < 4 * count:
        raise TruncatedPayload(
            f"{path}: expected {4 * count} payload bytes, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return np.flipud(arr.reshape(shape)).copy()


def write_depth(path, depth: np.ndarray, mask: np.ndarray | None = None) -> None:
    """Depth as 1-channel PFM; invalid pixels are stored as 0."""
    depth = np.asarray(depth, dtype=np.float64)
    if mask is not None:
        depth = np.where(mask, depth, 0.0)
    write_pfm(path, depth)


def read_depth(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a depth PFM; pixels with non-positive or non-finite values are
    reported invalid."""
    arr = read_pfm(path)
    if arr.ndim != 2:
        raise MalformedHeader(f"{path}: depth PFM must be single-channel")
    depth = arr.astype(np.float64)
    mask = np.isfinite(depth) & (depth > 0)
    return np.where(mask, depth, 0.0), mask


def write_normals_pfm(path, nmap: NormalMap) -> None:
    write_pfm(path, np.where(nmap.mask[..., None], nmap.normals, 0.0))


def read_normals_pfm(path, flip: bool = False) -> NormalMap:
    """Read normals from a 3-channel PFM; all-zero pixels are invalid.

    Valid normals must already be unit within the package tolerance; use the
    PNG16 reader for quantized sources needing renormalization.
    """
    arr = read_pfm(path)
    if arr.ndim != 3:
        raise MalformedHeader(f"{path}: normals PFM must be 3-channel")
    vals = arr.astype(np.float64)
    mask = np.any(vals != 0, axis=2)
    nmap = NormalMap.create(np.where(mask[..., None], vals, 0.0), mask)
    return nmap.flipped() if flip else nmap


def write_png16_normals(path, nmap: NormalMap) -> None:
    """Quantize normals to 16-bit RGB; invalid pixels become the all-zero
    sentinel."""
    scaled = np.clip((nmap.normals + 1.0) * 0.5, 0.0, 1.0) * 65535.0
    enc = np.rint(scaled).astype(np.uint16)
    enc[~nmap.mask] = 0
    ok = cv2.imwrite(str(path), enc[..., ::-1])  # stored BGR
    if not ok:
        raise NormintError(f"failed to write {path}")


def read_png16_normals(path, flip_z: bool = False) -> NormalMap:
    """Decode a 3-channel 16-bit PNG normal map.

    Channels map through v / 65535 * 2 - 1 and are renormalized to unit
    length; all-zero pixels are the invalid sentinel. ``flip_z`` negates the
    z-component for sources with the opposite z convention.
    """
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise NormintError(f"cannot read image {path}")
    if img.dtype != np.uint16 or img.ndim != 3 or img.shape[2] != 3:
        raise UnsupportedBitDepth(
            f"{path}: expected 3-channel 16-bit PNG, got {img.dtype} "
            f"with shape {img.shape}"
        )
    rgb = img[..., ::-1].astype(np.float64)
    mask = np.any(img != 0, axis=2)
    vals = rgb / 65535.0 * 2.0 - 1.0
    if flip_z:
        vals[..., 2] = -vals[..., 2]
    norms = np.linalg.norm(vals, axis=2)
    mask &= norms > 0
    vals = np.where(mask[..., None], vals / np.where(norms > 0, norms, 1.0)[..., None], 0.0)
    return NormalMap.create(vals, mask)


def write_mask(path, mask: np.ndarray) -> None:
    ok = cv2.imwrite(str(path), np.where(mask, 255, 0).astype(np.uint8))
    if not ok:
        raise NormintError(f"failed to write {path}")


def read_mask(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise NormintError(f"cannot read mask {path}")
    if img.ndim == 3:
        img = img[..., 0]
    return img > 0


def load_intrinsics(path) -> CameraIntrinsics:
    """Read pinhole intrinsics from JSON with numeric fx, fy, cx, cy keys."""
    path = Path(path)
    if not path.exists():
        raise NormintError(f"intrinsics file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{path}: invalid JSON ({exc})") from exc
    missing = [k for k in ("fx", "fy", "cx", "cy") if k not in doc]
    if missing:
        raise MalformedHeader(f"{path}: missing intrinsics keys {missing}")
    try:
        vals = {k: float(doc[k]) for k in ("fx", "fy", "cx", "cy")}
    except (TypeError, ValueError) as exc:
        raise MalformedHeader(f"{path}: intrinsics keys must be numeric") from exc
    return CameraIntrinsics(**vals)


def save_intrinsics(path, intr: CameraIntrinsics) -> None:
    Path(path).write_text(
        json.dumps({"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy})
        + "\n"
    )


def load_scene_dir(directory, flip_normals: bool = False):
    """Load a scene directory: normals (+mask, intrinsics, optional GT depth).

    Expects ``normals.pfm`` or ``normals.png`` (16-bit), ``intrinsics.json``,
    optional ``mask.png`` and ``depth_gt.pfm``. Returns
    ``(normal_map, intrinsics, gt_depth_or_None)``.
    """
    directory = Path(directory)
    pfm = directory / "normals.pfm"
    png = directory / "normals.png"
    if pfm.exists():
        nmap = read_normals_pfm(pfm, flip=flip_normals)
    elif png.exists():
        nmap = read_png16_normals(png)
        if flip_normals:
            nmap = nmap.flipped()
    else:
        raise NormintError(f"no normals.pfm or normals.png in {directory}")
    mask_path = directory / "mask.png"
    if mask_path.exists():
        joint = nmap.mask & read_mask(mask_path)
        nmap = NormalMap.create(
            np.where(joint[..., None], nmap.normals, 0.0), joint
        )
    intr = load_intrinsics(directory / "intrinsics.json")
    gt_path = directory / "depth_gt.pfm"
    gt = read_depth(gt_path)[0] if gt_path.exists() else None
    return nmap, intr, gt


def write_labels_bin(path, p: Partition, width: int, height: int) -> None:
    Path(path).write_bytes(export_labels(p, width, height))


def read_labels_bin(path) -> tuple[Partition, int, int]:
    return import_labels(Path(path).read_bytes())


def _hash_colors(labels: np.ndarray) -> np.ndarray:
    """Deterministic label -> RGB hashing (invalid labels go black)."""
    x = labels.astype(np.uint64)
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    x ^= x >> np.uint64(30)
    x = (x * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    x ^= x >> np.uint64(27)
    x = (x * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    x ^= x >> np.uint64(31)
    r = (x & np.uint64(0xFF)).astype(np.uint8)
    g = ((x >> np.uint64(8)) & np.uint64(0xFF)).astype(np.uint8)
    b = ((x >> np.uint64(16)) & np.uint64(0xFF)).astype(np.uint8)
    rgb = np.stack([r, g, b], axis=-1)
    rgb[labels < 0] = 0
    return rgb


def write_labels_png(path, p: Partition, width: int, height: int) -> None:
    rgb = _hash_colors(p.labels.reshape(height, width))
    ok = cv2.imwrite(str(path), rgb[..., ::-1])
    if not ok:
        raise NormintError(f"failed to write {path}")
