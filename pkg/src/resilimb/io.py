"""File formats: JSON documents for bodies, keypoints, cameras and reports;
PGM/PNG for masks; Wavefront OBJ for meshes.

Every JSON document carries ``schema_version``.  Floats are written with
``repr`` precision so JSON round trips are exact.  Loaders re-validate every
invariant and raise :class:`ParseError` (or a subclass) on bad input.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    N_BODY,
    N_RESIDUAL,
    ArticulatedBody,
    KeypointSet2D,
    KinematicTree,
    LimbId,
    LimbSpec,
    PinholeCamera,
    TriangleMesh,
    validate_limb_table,
)
from .errors import (
    DimensionOverflow,
    InvalidLimbTable,
    NonOrthonormalRotation,
    ParseError,
    SchemaVersionMismatch,
    UnsupportedImageFormat,
    WrongSlotCount,
)
from .metrics import BinaryMask

SCHEMA_VERSION = 1
MAX_MASK_PIXELS = 1 << 28

_NUM_LIST = re.compile(r"\[\s*([^\[\]{}\"]*?)\s*\]", re.S)


def dumps(doc) -> str:
    """Indented JSON with innermost numeric lists kept on one line."""
    text = json.dumps(doc, indent=2, allow_nan=False)
    return _NUM_LIST.sub(lambda m: "[" + re.sub(r"\s+", "", m.group(1)).replace(",", ", ") + "]", text) + "\n"


def _write(path, doc):
    Path(path).write_text(dumps(doc))


def _read(path, kind):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    version = doc.get("schema_version")
    if version is None:
        raise ParseError(f"{path}: missing section 'schema_version'")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{path}: schema_version {version}, expected {SCHEMA_VERSION}")
    if doc.get("kind", kind) != kind:
        raise ParseError(f"{path}: document kind {doc.get('kind')!r}, expected {kind!r}")
    return doc


def _section(doc, key, path):
    if key not in doc:
        raise ParseError(f"{path}: missing section {key!r}")
    return doc[key]


def _array(value, shape_tail, dtype, what):
    try:
        arr = np.array(value, dtype=dtype)
    except (TypeError, ValueError):
        raise ParseError(f"{what}: not a numeric array") from None
    if arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    if arr.shape[1:] != shape_tail or arr.ndim != 1 + len(shape_tail):
        raise ParseError(f"{what}: expected shape (n, {', '.join(map(str, shape_tail))}), got {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# body


@dataclass(frozen=True, eq=False)
class BodyFile:
    body: ArticulatedBody
    limb_table: dict
    keypoint_slots: tuple = field(default_factory=tuple)

    def residual_segments(self) -> list:
        """Per residual slot, the BODY_25 slots of the limb's anchor and target."""
        segs = [None] * N_RESIDUAL
        slots = self.keypoint_slots
        for spec in self.limb_table.values():
            if slots and slots[spec.anchor] >= 0 and slots[spec.target] >= 0:
                segs[spec.residual_slot] = (slots[spec.anchor], slots[spec.target])
        return segs


def save_body(path, body: ArticulatedBody, limb_table=None, keypoint_slots=(), geometry: str | None = None):
    """Write a body document; with ``geometry`` the mesh goes to a sidecar OBJ."""
    path = Path(path)
    sk = body.skeleton
    doc = {"schema_version": SCHEMA_VERSION, "kind": "body"}
    if geometry:
        save_mesh_obj(body.mesh, path.parent / geometry, precise=True)
        doc["geometry"] = geometry
    else:
        doc["vertices"] = body.mesh.vertices.tolist()
        doc["faces"] = body.mesh.faces.tolist()
    doc.update({
        "joints": sk.joints.tolist(),
        "parents": list(sk.parents),
        "joint_names": list(sk.names),
        "keypoint_slots": [int(s) for s in keypoint_slots],
        "part_labels": body.part_labels.tolist(),
        "part_names": {str(k): v for k, v in sorted(body.part_names.items())},
        "limbs": [
            {
                "limb": LimbId.parse(limb).name,
                "anchor": spec.anchor,
                "target": spec.target,
                "residual_slot": spec.residual_slot,
                "kept_parts": sorted(spec.kept_parts),
                "distal_parts": sorted(spec.distal_parts),
            }
            for limb, spec in sorted((limb_table or {}).items())
        ],
    })
    _write(path, doc)


def load_body(path) -> BodyFile:
    path = Path(path)
    doc = _read(path, "body")
    if "geometry" in doc:
        mesh = load_mesh_obj(path.parent / doc["geometry"])
    else:
        verts = _array(_section(doc, "vertices", path), (3,), float, f"{path}: vertices")
        faces = _array(_section(doc, "faces", path), (3,), np.int64, f"{path}: faces")
        try:
            mesh = TriangleMesh(verts, faces)
        except ValueError as exc:
            raise ParseError(f"{path}: mesh invariant violated: {exc}") from None
    joints = _array(_section(doc, "joints", path), (3,), float, f"{path}: joints")
    try:
        skeleton = KinematicTree(joints, _section(doc, "parents", path), doc.get("joint_names", ()))
    except (ValueError, TypeError) as exc:
        raise ParseError(f"{path}: skeleton invariant violated: {exc}") from None
    labels = _section(doc, "part_labels", path)
    if len(labels) != mesh.n_vertices:
        raise ParseError(f"{path}: part_labels has {len(labels)} entries but the mesh has "
                         f"{mesh.n_vertices} vertices (one label per vertex required)")
    try:
        names = {int(k): str(v) for k, v in _section(doc, "part_names", path).items()}
        body = ArticulatedBody(mesh, skeleton, labels, names)
    except (ValueError, TypeError, AttributeError) as exc:
        raise ParseError(f"{path}: body invariant violated: {exc}") from None

    slots = tuple(int(s) for s in doc.get("keypoint_slots", ()))
    if slots and (len(slots) != len(skeleton) or any(not -1 <= s < N_BODY for s in slots)):
        raise ParseError(f"{path}: keypoint_slots must give one BODY_25 slot (or -1) per joint")
    table = {}
    for i, entry in enumerate(doc.get("limbs", [])):
        try:
            limb = LimbId.parse(entry["limb"])
            spec = LimbSpec(entry["anchor"], entry["target"], entry["residual_slot"],
                            entry.get("kept_parts", ()), entry.get("distal_parts", ()))
        except (KeyError, ValueError, TypeError, InvalidLimbTable) as exc:
            raise ParseError(f"{path}: limbs[{i}]: {exc}") from None
        unknown = (spec.kept_parts | spec.distal_parts) - set(names)
        if unknown:
            raise ParseError(f"{path}: limbs[{i}]: unknown part ids {sorted(unknown)}")
        table[limb] = spec
    try:
        table = validate_limb_table(table, len(skeleton))
    except InvalidLimbTable as exc:
        raise ParseError(f"{path}: {exc}") from None
    return BodyFile(body, table, slots)


# ---------------------------------------------------------------------------
# keypoints and camera


def save_keypoints(path, keypoints: KeypointSet2D):
    _write(path, {
        "schema_version": SCHEMA_VERSION,
        "kind": "keypoints",
        "body": keypoints.body_array().tolist(),
        "residual": keypoints.residual_array().tolist(),
    })


def load_keypoints(path) -> KeypointSet2D:
    path = Path(path)
    doc = _read(path, "keypoints")
    arrays = {}
    for key, count in (("body", N_BODY), ("residual", N_RESIDUAL)):
        arr = _array(_section(doc, key, path), (3,), float, f"{path}: {key}")
        if len(arr) != count:
            raise WrongSlotCount(f"{path}: {key} has {len(arr)} entries, expected {count}")
        if not np.all(np.isfinite(arr)):
            raise ParseError(f"{path}: {key} contains non-finite values")
        bad = np.flatnonzero((arr[:, 2] < 0) | (arr[:, 2] > 1))
        if bad.size:
            raise ParseError(f"{path}: {key}[{bad[0]}] confidence {arr[bad[0], 2]} violates the [0, 1] invariant")
        arrays[key] = arr
    return KeypointSet2D.from_arrays(arrays["body"], arrays["residual"])


def save_camera(path, cam: PinholeCamera):
    _write(path, {
        "schema_version": SCHEMA_VERSION,
        "kind": "camera",
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "rotation": cam.rotation.tolist(),
        "translation": cam.translation.tolist(),
        "image_width": cam.image_width,
        "image_height": cam.image_height,
    })


def load_camera(path) -> PinholeCamera:
    path = Path(path)
    doc = _read(path, "camera")
    rot = _array(_section(doc, "rotation", path), (3,), float, f"{path}: rotation")
    if rot.shape != (3, 3):
        raise ParseError(f"{path}: rotation must be 3x3")
    if not np.all(np.isfinite(rot)) or np.abs(rot.T @ rot - np.eye(3)).max() > 1e-9 or np.linalg.det(rot) < 0:
        raise NonOrthonormalRotation(f"{path}: rotation is not a proper orthonormal matrix")
    try:
        return PinholeCamera(
            float(_section(doc, "fx", path)), float(_section(doc, "fy", path)),
            float(_section(doc, "cx", path)), float(_section(doc, "cy", path)),
            rot, _section(doc, "translation", path),
            int(_section(doc, "image_width", path)), int(_section(doc, "image_height", path)),
        )
    except (ValueError, TypeError) as exc:
        raise ParseError(f"{path}: camera invariant violated: {exc}") from None


# ---------------------------------------------------------------------------
# masks


def save_mask(path, mask: BinaryMask):
    path = Path(path)
    data = np.where(mask.bits, 255, 0).astype(np.uint8)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        path.write_bytes(f"P5\n{mask.width} {mask.height}\n255\n".encode() + data.tobytes())
    elif suffix == ".png":
        from PIL import Image

        Image.fromarray(data, mode="L").save(path, format="PNG")
    else:
        raise UnsupportedImageFormat(f"{path}: masks are written as .pgm or .png")


def _parse_pgm(raw: bytes, path) -> np.ndarray:
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ParseError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise UnsupportedImageFormat(f"{path}: only 8-bit PGM (maxval 255) is supported")
    if width <= 0 or height <= 0 or width * height > MAX_MASK_PIXELS:
        raise DimensionOverflow(f"{path}: mask dimensions {width}x{height} out of range")
    body = raw[pos + 1:]
    if len(body) != width * height:
        raise DimensionOverflow(f"{path}: header declares {width * height} pixels, found {len(body)} bytes")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)


def load_mask(path) -> BinaryMask:
    """Pixels above 127 are foreground."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"P5":
        data = _parse_pgm(raw, path)
    elif raw[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        Image.MAX_IMAGE_PIXELS = MAX_MASK_PIXELS
        try:
            with Image.open(path) as img:
                if img.mode != "L":
                    raise UnsupportedImageFormat(f"{path}: PNG mode {img.mode}, need 8-bit single channel (L)")
                data = np.asarray(img)
        except Image.DecompressionBombError:
            raise DimensionOverflow(f"{path}: image too large") from None
    else:
        raise UnsupportedImageFormat(f"{path}: not a binary PGM (P5) or PNG file")
    return BinaryMask(data.shape[1], data.shape[0], data > 127)


# ---------------------------------------------------------------------------
# OBJ


def save_mesh_obj(mesh: TriangleMesh, path, precise: bool = False):
    """Write vertices and 1-based faces.  Coordinates use 9 significant digits
    unless ``precise`` is set, in which case they are written losslessly."""
    fmt = repr if precise else (lambda x: f"{x:.9g}")
    lines = [f"v {fmt(float(x))} {fmt(float(y))} {fmt(float(z))}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh_obj(path) -> TriangleMesh:
    path = Path(path)
    verts, faces = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "v":
            try:
                xyz = [float(t) for t in parts[1:4]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad vertex coordinates") from None
            if len(xyz) != 3 or not all(np.isfinite(xyz)):
                raise ParseError(f"{path}:{lineno}: vertex needs three finite coordinates")
            verts.append(xyz)
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                try:
                    k = int(tok.split("/", 1)[0])
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad face index {tok!r}") from None
                if k == 0:
                    raise ParseError(f"{path}:{lineno}: face index 0 (OBJ indices are 1-based)")
                k = k - 1 if k > 0 else len(verts) + k
                if not 0 <= k < len(verts):
                    raise ParseError(f"{path}:{lineno}: face index {tok} out of range")
                idx.append(k)
            if len(idx) < 3:
                raise ParseError(f"{path}:{lineno}: face needs at least 3 vertices")
            faces.extend([idx[0], idx[i], idx[i + 1]] for i in range(1, len(idx) - 1))
    try:
        return TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
