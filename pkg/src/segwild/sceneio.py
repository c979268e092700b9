"""Bit-exact file I/O for splat scenes, features, cameras, and mask banks.

Formats:
  - Splat PLY (binary little-endian): properties x, y, z, f_dc_0..2,
    opacity (logit), scale_0..2 (natural log), rot_0..3 (w, x, y, z).
    Extra properties (normals, higher-order SH) are accepted and ignored.
  - "AFFN" affinity sidecar: magic, u32 N, u32 C, float32 data.
  - "FMAP" feature file: magic, u32 H, u32 W, u32 C, float32 row-major.
  - "PCAM" PCA model: magic, u32 in_dim, u32 out_dim, u32 flags,
    float32 mean, float32 basis row-major.
  - Camera JSON: {fx, fy, cx, cy, width, height, R: [9], t: [3]}.
  - Mask bank: directory of 8-bit PNGs (0/255) plus a JSON manifest
    {image_id, masks: [{file, confidence}]}.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .types import Camera, FeatureMap, GaussianScene, MaskBank

# Degree-0 spherical harmonic basis constant; color = 0.5 + SH_C0 * f_dc.
SH_C0 = 0.28209479177387814

OPACITY_LOGIT_MAX = 15.0

PLY_PROPS = ("x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
             "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3")


class FileFormatError(ValueError):
    """A file does not match its declared on-disk format."""


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p, clamp=OPACITY_LOGIT_MAX):
    p = np.clip(p, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        x = np.log(p) - np.log1p(-p)
    return np.clip(x, -clamp, clamp)


def affinity_sidecar_path(ply_path) -> Path:
    return Path(ply_path).with_suffix(".affn")


def _parse_ply_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise FileFormatError("not a PLY file")
    fmt = fh.readline().strip()
    if fmt != b"format binary_little_endian 1.0":
        raise FileFormatError(f"unsupported PLY format: {fmt.decode(errors='replace')}")
    count = None
    props = []
    while True:
        line = fh.readline()
        if not line:
            raise FileFormatError("PLY header truncated")
        line = line.strip()
        if line == b"end_header":
            break
        parts = line.split()
        if parts[0] == b"comment":
            continue
        if parts[0] == b"element":
            if parts[1] == b"vertex":
                count = int(parts[2])
            elif count is not None:
                raise FileFormatError("elements after vertex are not supported")
        elif parts[0] == b"property" and count is not None:
            if parts[1] != b"float":
                raise FileFormatError(f"non-float vertex property {parts[2].decode()}")
            props.append(parts[2].decode())
    if count is None:
        raise FileFormatError("PLY header missing vertex element")
    return count, props


def load_scene(path) -> GaussianScene:
    """Load a splat PLY (+ optional AFFN sidecar), applying activations.

    Stored log-scales become scales (exp), opacity logits become opacities
    (logistic), quaternions are renormalized, and f_dc coefficients map to
    base colors clamped to [0, 1]. Missing sidecar -> zero affinities with
    the default 64 channels (or metadata override).
    """
    path = Path(path)
    with open(path, "rb") as fh:
        count, props = _parse_ply_header(fh)
        missing = [p for p in PLY_PROPS if p not in props]
        if missing:
            raise FileFormatError(f"PLY missing required properties: {missing}")
        raw = np.fromfile(fh, dtype="<f4", count=count * len(props))
    if raw.size != count * len(props):
        raise FileFormatError("PLY payload shorter than header declares")
    raw = raw.reshape(count, len(props)).astype(np.float64)
    col = {p: raw[:, i] for i, p in enumerate(props)}
    if not all(np.all(np.isfinite(col[p])) for p in PLY_PROPS):
        raise FileFormatError("non-finite values in PLY payload")

    positions = np.stack([col["x"], col["y"], col["z"]], axis=1)
    colors = np.clip(0.5 + SH_C0 * np.stack(
        [col["f_dc_0"], col["f_dc_1"], col["f_dc_2"]], axis=1), 0.0, 1.0)
    opacities = _sigmoid(col["opacity"])
    scales = np.exp(np.stack([col["scale_0"], col["scale_1"], col["scale_2"]], axis=1))
    rotations = np.stack([col[f"rot_{i}"] for i in range(4)], axis=1)
    norms = np.linalg.norm(rotations, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise FileFormatError("zero-norm quaternion in PLY")
    rotations = rotations / norms

    sidecar = affinity_sidecar_path(path)
    if sidecar.exists():
        affinities = load_affinity(sidecar)
        if affinities.shape[0] != count:
            raise FileFormatError(
                f"affinity sidecar has {affinities.shape[0]} rows, PLY has {count}")
    else:
        affinities = np.zeros((count, 64))

    scene = GaussianScene(positions=positions, rotations=rotations, scales=scales,
                          opacities=opacities, colors=colors, affinities=affinities,
                          metadata={"source": str(path)})
    return scene.validate()


def save_scene(scene: GaussianScene, path) -> None:
    """Write a splat PLY plus AFFN sidecar, applying inverse activations."""
    path = Path(path)
    n = len(scene)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in PLY_PROPS]
    header.append("end_header")
    f_dc = (scene.colors - 0.5) / SH_C0
    body = np.empty((n, len(PLY_PROPS)), dtype="<f4")
    body[:, 0:3] = scene.positions
    body[:, 3:6] = f_dc
    body[:, 6] = _logit(scene.opacities)
    body[:, 7:10] = np.log(scene.scales)
    body[:, 10:14] = scene.rotations
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(body.tobytes())
    save_affinity(scene.affinities, affinity_sidecar_path(path))


def load_affinity(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != b"AFFN":
            raise FileFormatError(f"bad affinity magic {magic!r}")
        n, c = struct.unpack("<II", fh.read(8))
        data = np.fromfile(fh, dtype="<f4", count=n * c)
    if data.size != n * c:
        raise FileFormatError("affinity payload truncated")
    return data.reshape(n, c).astype(np.float64)


def save_affinity(af: np.ndarray, path) -> None:
    af = np.asarray(af)
    with open(path, "wb") as fh:
        fh.write(b"AFFN")
        fh.write(struct.pack("<II", af.shape[0], af.shape[1]))
        fh.write(np.ascontiguousarray(af, dtype="<f4").tobytes())


MAX_DIM = 1 << 24  # guards against u32 dimension overflow blowing up memory


def load_feature_map(path) -> FeatureMap:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != b"FMAP":
            raise FileFormatError(f"bad feature map magic {magic!r}")
        h, w, c = struct.unpack("<III", fh.read(12))
        if max(h, w, c) > MAX_DIM or h * w * c > MAX_DIM:
            raise FileFormatError(f"feature map dimensions overflow: {h}x{w}x{c}")
        data = np.fromfile(fh, dtype="<f4", count=h * w * c)
    if data.size != h * w * c:
        raise FileFormatError("feature map payload truncated")
    return FeatureMap(data.reshape(h, w, c)).validate()


def save_feature_map(fm: FeatureMap, path) -> None:
    with open(path, "wb") as fh:
        fh.write(b"FMAP")
        fh.write(struct.pack("<III", fm.height, fm.width, fm.channels))
        fh.write(np.ascontiguousarray(fm.data, dtype="<f4").tobytes())


def load_camera(path) -> Camera:
    with open(path) as fh:
        return camera_from_dict(json.load(fh))


def camera_from_dict(d: dict) -> Camera:
    try:
        cam = Camera(fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]),
                     cy=float(d["cy"]), width=d["width"], height=d["height"],
                     R=np.asarray(d["R"], dtype=np.float64),
                     t=np.asarray(d["t"], dtype=np.float64))
    except (KeyError, TypeError) as exc:
        raise FileFormatError(f"camera JSON missing field: {exc}") from exc
    if cam.R.size != 9 or cam.t.size != 3:
        raise FileFormatError("camera R must have 9 entries and t 3")
    return cam.validate()


def camera_to_dict(cam: Camera) -> dict:
    return {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "R": [float(v) for v in cam.R.reshape(-1)],
            "t": [float(v) for v in cam.t]}


def save_camera(cam: Camera, path) -> None:
    with open(path, "w") as fh:
        json.dump(camera_to_dict(cam), fh, indent=2)
        fh.write("\n")


def load_mask_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return arr >= 128


def save_mask_png(mask: np.ndarray, path) -> None:
    img = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L")
    img.save(path)


def save_color_png(rgb: np.ndarray, path) -> None:
    """Write an (H, W, 3) float image in [0, 1] as 8-bit PNG."""
    arr = np.clip(np.asarray(rgb) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_mask_bank(manifest_path) -> MaskBank:
    """Load a mask-bank directory via its JSON manifest."""
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if "image_id" not in manifest or "masks" not in manifest:
        raise FileFormatError("mask manifest needs image_id and masks")
    masks = []
    confidences = []
    for entry in manifest["masks"]:
        masks.append(load_mask_png(manifest_path.parent / entry["file"]))
        confidences.append(float(entry.get("confidence", 1.0)))
    if masks:
        shape = masks[0].shape
        if any(m.shape != shape for m in masks):
            raise FileFormatError("mask bitmaps have inconsistent sizes")
        stack = np.stack(masks)
    else:
        stack = np.zeros((0, 0, 0), dtype=bool)
    return MaskBank.build(str(manifest["image_id"]), stack, confidences).validate()


def save_mask_bank(bank: MaskBank, directory) -> Path:
    """Write PNGs plus manifest.json into `directory`; returns manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(len(bank)):
        name = f"mask_{i:03d}.png"
        save_mask_png(bank.masks[i], directory / name)
        entries.append({"file": name, "confidence": float(bank.confidences[i])})
    manifest = {"image_id": bank.image_id, "masks": entries}
    manifest_path = directory / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest_path
