"""Geometric and body-model value types shared across the package.

Points are plain ``numpy`` float arrays (shape ``(3,)`` in meters, ``(2,)`` in
pixels).  All container types are frozen and hold read-only arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DepthNonPositive, InvalidLimbTable

MIN_DEPTH = 1e-6

# OpenPose BODY_25 order.
BODY25_NAMES = (
    "nose", "neck",
    "right_shoulder", "right_elbow", "right_wrist",
    "left_shoulder", "left_elbow", "left_wrist",
    "mid_hip",
    "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
    "right_eye", "left_eye", "right_ear", "left_ear",
    "left_big_toe", "left_small_toe", "left_heel",
    "right_big_toe", "right_small_toe", "right_heel",
)
N_BODY = 25
N_RESIDUAL = 8
N_FULL = N_BODY + N_RESIDUAL


class LimbId(enum.IntEnum):
    """Residual-limb endpoints; the integer value is the residual keypoint slot."""

    LeftUpperArm = 0
    LeftForearm = 1
    RightUpperArm = 2
    RightForearm = 3
    LeftThigh = 4
    LeftShank = 5
    RightThigh = 6
    RightShank = 7

    @classmethod
    def parse(cls, value) -> "LimbId":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value]
            except KeyError:
                raise ValueError(f"unknown limb id {value!r}") from None
        return cls(int(value))


def _frozen_array(values, dtype, shape_tail, name):
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        raise ValueError(f"{name} must have shape (n, {', '.join(map(str, shape_tail))}), got {arr.shape}")
    if dtype is float and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def as_vec3(p) -> np.ndarray:
    v = np.asarray(p, dtype=float).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite values")
    return v


def as_vec2(p) -> np.ndarray:
    v = np.asarray(p, dtype=float).reshape(-1)
    if v.shape != (2,):
        raise ValueError(f"expected a 2-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite values")
    return v


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = _frozen_array(self.vertices, float, (3,), "vertices")
        faces = _frozen_array(self.faces, np.int64, (3,), "faces")
        if faces.size:
            if faces.min() < 0 or faces.max() >= len(verts):
                raise ValueError("face index out of range")
            if np.any((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])):
                raise ValueError("face with repeated vertex index")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


@dataclass(frozen=True, eq=False)
class KinematicTree:
    joints: np.ndarray
    parents: tuple
    names: tuple = ()

    def __post_init__(self):
        joints = _frozen_array(self.joints, float, (3,), "joints")
        parents = tuple(int(p) for p in self.parents)
        if len(parents) != len(joints):
            raise ValueError("parents length must equal joint count")
        if parents.count(-1) != 1:
            raise ValueError("kinematic tree needs exactly one root")
        for i, p in enumerate(parents):
            if p < -1 or p >= len(joints) or p == i:
                raise ValueError(f"invalid parent {p} for joint {i}")
        # every chain must reach the root within n steps
        for i in range(len(joints)):
            j, steps = i, 0
            while parents[j] != -1:
                j = parents[j]
                steps += 1
                if steps > len(joints):
                    raise ValueError(f"cycle in parent chain of joint {i}")
        names = tuple(str(n) for n in self.names)
        if names and len(names) != len(joints):
            raise ValueError("names length must equal joint count")
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "names", names)

    def __len__(self):
        return len(self.joints)

    def chain_to_root(self, i: int) -> list[int]:
        out = [i]
        while self.parents[out[-1]] != -1:
            out.append(self.parents[out[-1]])
        return out

    def descendants(self, i: int) -> set[int]:
        """Joints whose parent chain passes through ``i`` (including ``i``)."""
        return {j for j in range(len(self)) if i in self.chain_to_root(j)}

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True, eq=False)
class ArticulatedBody:
    mesh: TriangleMesh
    skeleton: KinematicTree
    part_labels: np.ndarray
    part_names: Mapping[int, str]

    def __post_init__(self):
        labels = np.array(self.part_labels, dtype=np.int64).reshape(-1)
        if len(labels) != self.mesh.n_vertices:
            raise ValueError("part_labels length must equal vertex count")
        names = {int(k): str(v) for k, v in dict(self.part_names).items()}
        missing = set(np.unique(labels).tolist()) - set(names)
        if missing:
            raise ValueError(f"part labels without names: {sorted(missing)}")
        labels.setflags(write=False)
        object.__setattr__(self, "part_labels", labels)
        object.__setattr__(self, "part_names", names)

    def part_id(self, name: str) -> int:
        for k, v in self.part_names.items():
            if v == name:
                return k
        raise KeyError(name)

    def part_mask(self, ids) -> np.ndarray:
        return np.isin(self.part_labels, np.fromiter(ids, dtype=np.int64, count=-1))


@dataclass(frozen=True)
class LimbSpec:
    """Where one residual limb lives in a body.

    ``anchor`` and ``target`` index skeleton joints; ``kept_parts`` is the
    segment that survives the cut and ``distal_parts`` is pruned outright.
    """

    anchor: int
    target: int
    residual_slot: int
    kept_parts: frozenset = field(default_factory=frozenset)
    distal_parts: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "kept_parts", frozenset(int(i) for i in self.kept_parts))
        object.__setattr__(self, "distal_parts", frozenset(int(i) for i in self.distal_parts))
        if self.kept_parts & self.distal_parts:
            raise InvalidLimbTable("kept and distal part sets overlap")


def validate_limb_table(table: Mapping, n_joints: int) -> dict[LimbId, LimbSpec]:
    out = {}
    for key, spec in table.items():
        limb = LimbId.parse(key)
        if not isinstance(spec, LimbSpec):
            try:
                spec = LimbSpec(*spec)
            except TypeError as exc:
                raise InvalidLimbTable(f"{limb.name}: {exc}") from None
        for idx in (spec.anchor, spec.target):
            if not 0 <= idx < n_joints:
                raise InvalidLimbTable(f"{limb.name}: joint index {idx} out of range")
        if spec.anchor == spec.target:
            raise InvalidLimbTable(f"{limb.name}: anchor equals target")
        if not 0 <= spec.residual_slot < N_RESIDUAL:
            raise InvalidLimbTable(f"{limb.name}: residual slot {spec.residual_slot} out of range")
        if any(other.residual_slot == spec.residual_slot for other in out.values()):
            raise InvalidLimbTable(f"{limb.name}: residual slot {spec.residual_slot} used twice")
        out[limb] = spec
    return out


@dataclass(frozen=True, eq=False)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    image_width: int = 640
    image_height: int = 480

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(rot)) or np.abs(rot.T @ rot - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation must be orthonormal")
        trans = as_vec3(self.translation).copy()
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        w, h = int(self.image_width), int(self.image_height)
        if w <= 0 or h <= 0:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "image_width", w)
        object.__setattr__(self, "image_height", h)

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation


def project_points(points, cam: PinholeCamera) -> np.ndarray:
    """Vectorized projection of ``(n, 3)`` points; raises on any non-positive depth."""
    pc = cam.to_camera(np.asarray(points, dtype=float).reshape(-1, 3))
    bad = np.flatnonzero(pc[:, 2] <= MIN_DEPTH)
    if bad.size:
        raise DepthNonPositive(f"point {int(bad[0])} has camera depth {pc[bad[0], 2]:.3g} m")
    return np.column_stack([cam.fx * pc[:, 0] / pc[:, 2] + cam.cx, cam.fy * pc[:, 1] / pc[:, 2] + cam.cy])


def project(p, cam: PinholeCamera) -> np.ndarray:
    return project_points(as_vec3(p)[None], cam)[0]


def project_jacobian(p, cam: PinholeCamera) -> np.ndarray:
    """Analytic 2x3 Jacobian of :func:`project` with respect to the world point."""
    x, y, z = cam.to_camera(as_vec3(p))
    if z <= MIN_DEPTH:
        raise DepthNonPositive(f"camera depth {z:.3g} m")
    d = np.array([
        [cam.fx / z, 0.0, -cam.fx * x / z**2],
        [0.0, cam.fy / z, -cam.fy * y / z**2],
    ])
    return d @ cam.rotation


@dataclass(frozen=True, eq=False)
class Keypoint2D:
    position: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        pos = as_vec2(self.position).copy()
        pos.setflags(write=False)
        c = float(self.confidence)
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"confidence {c} outside [0, 1]")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "confidence", c)

    @property
    def visible(self) -> bool:
        return self.confidence > 0


def _absent():
    return Keypoint2D(np.zeros(2), 0.0)


@dataclass(frozen=True, eq=False)
class KeypointSet2D:
    """25 BODY_25 slots plus 8 residual-endpoint slots; confidence 0 = absent."""

    intact: tuple
    residual: tuple

    def __post_init__(self):
        intact, residual = tuple(self.intact), tuple(self.residual)
        if len(intact) != N_BODY or len(residual) != N_RESIDUAL:
            raise ValueError(f"expected {N_BODY}+{N_RESIDUAL} keypoints, got {len(intact)}+{len(residual)}")
        object.__setattr__(self, "intact", intact)
        object.__setattr__(self, "residual", residual)

    @classmethod
    def empty(cls) -> "KeypointSet2D":
        return cls(tuple(_absent() for _ in range(N_BODY)), tuple(_absent() for _ in range(N_RESIDUAL)))

    @classmethod
    def from_arrays(cls, body, residual) -> "KeypointSet2D":
        body = np.asarray(body, dtype=float).reshape(N_BODY, 3)
        residual = np.asarray(residual, dtype=float).reshape(N_RESIDUAL, 3)
        return cls(
            tuple(Keypoint2D(r[:2], r[2]) for r in body),
            tuple(Keypoint2D(r[:2], r[2]) for r in residual),
        )

    def body_array(self) -> np.ndarray:
        return np.array([[*k.position, k.confidence] for k in self.intact])

    def residual_array(self) -> np.ndarray:
        return np.array([[*k.position, k.confidence] for k in self.residual])

    @property
    def all(self) -> tuple:
        return self.intact + self.residual
