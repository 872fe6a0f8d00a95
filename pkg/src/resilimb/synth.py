"""Synthetic articulated bodies and amputee scenes with known ground truth.

Bodies are unions of closed primitives: one capped cylinder (or capsule) per
limb segment, a cylinder head and a box torso.  Each primitive is its own connected
component and carries one part label, so every body is watertight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import (
    BODY25_NAMES,
    N_BODY,
    N_RESIDUAL,
    ArticulatedBody,
    KeypointSet2D,
    KinematicTree,
    LimbId,
    LimbSpec,
    PinholeCamera,
    TriangleMesh,
    project,
    project_points,
)
from .meshedit import LIMB_PARTS, ReconstructionParams, apply_stump, reconstruct_residual_limb
from .metrics import BinaryMask, rasterize_silhouette
from .optimizer import OptimizationTrace, Termination
from .rafo import RafoResult, RafoWeights, residual_endpoint

JOINTS = (
    ("mid_hip", None),
    ("neck", "mid_hip"),
    ("nose", "neck"),
    ("right_shoulder", "neck"),
    ("right_elbow", "right_shoulder"),
    ("right_wrist", "right_elbow"),
    ("left_shoulder", "neck"),
    ("left_elbow", "left_shoulder"),
    ("left_wrist", "left_elbow"),
    ("right_hip", "mid_hip"),
    ("right_knee", "right_hip"),
    ("right_ankle", "right_knee"),
    ("left_hip", "mid_hip"),
    ("left_knee", "left_hip"),
    ("left_ankle", "left_knee"),
    ("left_big_toe", "left_ankle"),
    ("right_big_toe", "right_ankle"),
)
JOINT_NAMES = tuple(name for name, _ in JOINTS)
JOINT_PARENTS = tuple(-1 if p is None else JOINT_NAMES.index(p) for _, p in JOINTS)
# BODY_25 slot of every skeleton joint
JOINT_SLOTS = tuple(BODY25_NAMES.index(name) for name in JOINT_NAMES)

PART_NAMES = {
    0: "torso", 1: "head",
    2: "left_upper_arm", 3: "left_forearm", 4: "left_hand",
    5: "right_upper_arm", 6: "right_forearm", 7: "right_hand",
    8: "left_thigh", 9: "left_lower_leg", 10: "left_foot",
    11: "right_thigh", 12: "right_lower_leg", 13: "right_foot",
}

# (anchor, target): anchor is the distal joint of the segment that is cut
LIMB_JOINTS = {
    LimbId.LeftUpperArm: ("left_elbow", "left_shoulder"),
    LimbId.LeftForearm: ("left_wrist", "left_elbow"),
    LimbId.RightUpperArm: ("right_elbow", "right_shoulder"),
    LimbId.RightForearm: ("right_wrist", "right_elbow"),
    LimbId.LeftThigh: ("left_knee", "left_hip"),
    LimbId.LeftShank: ("left_ankle", "left_knee"),
    LimbId.RightThigh: ("right_knee", "right_hip"),
    LimbId.RightShank: ("right_ankle", "right_knee"),
}

DEFAULT_LENGTHS = {"upper_arm": 0.30, "forearm": 0.26, "hand": 0.09, "thigh": 0.42, "shank": 0.42, "foot": 0.16}
DEFAULT_RADII = {"upper_arm": 0.045, "forearm": 0.035, "hand": 0.03, "thigh": 0.075, "shank": 0.05, "foot": 0.04}
DEFAULT_POSE = {
    "shoulder_abduction": 25.0, "shoulder_flexion": 10.0, "elbow_flexion": 25.0,
    "hip_abduction": 6.0, "hip_flexion": 10.0, "knee_flexion": 15.0,
}


@dataclass(frozen=True)
class SynthBodySpec:
    segment_lengths: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_LENGTHS))
    segment_radii: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_RADII))
    ring_resolution: int = 16
    axial_resolution: int = 24
    pose_angles: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_POSE))
    pose_jitter_deg: float = 15.0
    seed: int = 0
    limb_shape: str = "cylinder"

    def __post_init__(self):
        if self.limb_shape not in ("cylinder", "capsule"):
            raise ValueError("limb_shape must be 'cylinder' or 'capsule'")
        lengths = {**DEFAULT_LENGTHS, **dict(self.segment_lengths)}
        radii = {**DEFAULT_RADII, **dict(self.segment_radii)}
        if any(v <= 0 for v in lengths.values()) or any(v <= 0 for v in radii.values()):
            raise ValueError("segment lengths and radii must be positive")
        if self.ring_resolution < 8 or self.axial_resolution < 4:
            raise ValueError("need ring_resolution >= 8 and axial_resolution >= 4")
        object.__setattr__(self, "segment_lengths", lengths)
        object.__setattr__(self, "segment_radii", radii)
        object.__setattr__(self, "pose_angles", {**DEFAULT_POSE, **dict(self.pose_angles)})


@dataclass(frozen=True)
class CameraParams:
    focal_px: float = 1000.0
    distance_m: float = 4.0
    image_width: int = 640
    image_height: int = 720
    yaw_range_deg: float = 30.0


@dataclass(frozen=True, eq=False)
class SynthScene:
    body: ArticulatedBody
    amputated_body: ArticulatedBody
    camera: PinholeCamera
    true_lambda: dict
    gt_keypoints: KeypointSet2D
    gt_mask: BinaryMask | None
    limb_table: dict


# ---------------------------------------------------------------------------
# primitives


def _frame(axis):
    w = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(helper, w)
    u /= np.linalg.norm(u)
    return u, np.cross(w, u), w


def _strips(lower, upper) -> np.ndarray:
    """Quad strips between matching rows of ring indices, two triangles per quad."""
    a, b = np.atleast_2d(lower), np.atleast_2d(upper)
    a1, b1 = np.roll(a, -1, axis=1), np.roll(b, -1, axis=1)
    return np.stack([np.stack([a, a1, b1], -1), np.stack([a, b1, b], -1)], 1).reshape(-1, 3)


def cylinder_mesh(start, end, radius, ring_resolution=16, axial_resolution=8, caps=True) -> TriangleMesh:
    """Outward-oriented cylinder from ``start`` to ``end``.

    Vertices: ``(axial_resolution + 1) * ring_resolution`` grid points, then
    one centre vertex per cap.
    """
    start, end = np.asarray(start, float), np.asarray(end, float)
    u, v, _ = _frame(end - start)
    n, k = ring_resolution, axial_resolution
    theta = 2 * np.pi * np.arange(n) / n
    circle = radius * (np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v)
    t = np.linspace(0.0, 1.0, k + 1)
    verts = (start + t[:, None, None] * (end - start) + circle[None]).reshape(-1, 3)
    ring = lambda r: r * n + np.arange(n)  # noqa: E731
    rows = np.arange((k + 1) * n).reshape(k + 1, n)
    faces = [_strips(rows[:-1], rows[1:])]
    if caps:
        c0, c1 = len(verts), len(verts) + 1
        verts = np.vstack([verts, start, end])
        a, b = ring(0), ring(k)
        faces.append(np.column_stack([np.full(n, c0), np.roll(a, -1), a]))
        faces.append(np.column_stack([np.full(n, c1), b, np.roll(b, -1)]))
    return TriangleMesh(verts, np.vstack(faces))


def capsule_mesh(start, end, radius, ring_resolution=16, axial_resolution=8, cap_rings=4) -> TriangleMesh:
    """Cylinder closed by hemispheres centred on ``start`` and ``end``.

    Vertices: the cylinder grid, then ``cap_rings - 1`` rings per hemisphere
    (start side first, each ordered toward its pole), then the two poles.
    """
    start, end = np.asarray(start, float), np.asarray(end, float)
    u, v, w = _frame(end - start)
    n, k = ring_resolution, axial_resolution
    theta = 2 * np.pi * np.arange(n) / n
    unit = np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v
    t = np.linspace(0.0, 1.0, k + 1)
    grid = (start + t[:, None, None] * (end - start) + radius * unit[None]).reshape(-1, 3)
    angles = 0.5 * np.pi * np.arange(1, cap_rings) / cap_rings
    lower = [start - radius * np.sin(a) * w + radius * np.cos(a) * unit for a in angles]
    upper = [end + radius * np.sin(a) * w + radius * np.cos(a) * unit for a in angles]
    verts = np.vstack([grid, *lower, *upper, start - radius * w, end + radius * w])

    ring = lambda r: r * n + np.arange(n)  # noqa: E731
    base_lo = (k + 1) * n
    base_hi = base_lo + (cap_rings - 1) * n
    lo_rings = [ring(0)] + [base_lo + i * n + np.arange(n) for i in range(cap_rings - 1)]
    hi_rings = [ring(k)] + [base_hi + i * n + np.arange(n) for i in range(cap_rings - 1)]
    pole_lo, pole_hi = len(verts) - 2, len(verts) - 1
    rows = np.arange((k + 1) * n).reshape(k + 1, n)
    lo, hi = np.array(lo_rings), np.array(hi_rings)
    faces = [_strips(rows[:-1], rows[1:]), _strips(lo[1:], lo[:-1]), _strips(hi[:-1], hi[1:])]
    last_lo, last_hi = lo_rings[-1], hi_rings[-1]
    faces.append(np.column_stack([np.full(n, pole_lo), np.roll(last_lo, -1), last_lo]))
    faces.append(np.column_stack([np.full(n, pole_hi), last_hi, np.roll(last_hi, -1)]))
    return TriangleMesh(verts, np.vstack(faces))


def box_mesh(lo, hi) -> TriangleMesh:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    faces = np.array([
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ])
    return TriangleMesh(corners, faces)


def merge_meshes(parts) -> tuple[TriangleMesh, np.ndarray]:
    """Concatenate ``(mesh, label)`` pairs; returns the mesh and per-vertex labels."""
    verts, faces, labels = [], [], []
    offset = 0
    for mesh, label in parts:
        verts.append(mesh.vertices)
        faces.append(mesh.faces + offset)
        labels.append(np.full(mesh.n_vertices, label, dtype=np.int64))
        offset += mesh.n_vertices
    return TriangleMesh(np.vstack(verts), np.vstack(faces)), np.concatenate(labels)


def _direction(side, abduction, flexion, forward_sign):
    a, f = np.radians(abduction), np.radians(flexion)
    d = np.array([side * np.sin(a), np.cos(a) * np.cos(f), forward_sign * np.cos(a) * np.sin(f)])
    return d / np.linalg.norm(d)


def _bend(d, angle, toward):
    w = np.asarray(toward, float)
    perp = w - (w @ d) * d
    perp /= np.linalg.norm(perp)
    b = np.radians(angle)
    return np.cos(b) * d + np.sin(b) * perp


# ---------------------------------------------------------------------------
# bodies


def skeleton_joints(spec: SynthBodySpec) -> np.ndarray:
    """Joint positions (world frame: x = subject's left, y down, z away from camera)."""
    rng = np.random.default_rng(spec.seed)
    L = spec.segment_lengths
    pose = spec.pose_angles
    jit = spec.pose_jitter_deg
    j = {
        "mid_hip": np.zeros(3),
        "neck": np.array([0.0, -0.5, 0.0]),
        "nose": np.array([0.0, -0.65, -0.09]),
    }
    for side_name, side in (("left", 1.0), ("right", -1.0)):
        ang = {k: v + rng.uniform(-jit, jit) for k, v in pose.items()}
        shoulder = np.array([side * 0.18, -0.46, 0.0])
        upper = _direction(side, ang["shoulder_abduction"], ang["shoulder_flexion"], -1.0)
        elbow = shoulder + L["upper_arm"] * upper
        fore = _bend(upper, ang["elbow_flexion"], [0.0, 0.0, -1.0])
        j[f"{side_name}_shoulder"] = shoulder
        j[f"{side_name}_elbow"] = elbow
        j[f"{side_name}_wrist"] = elbow + L["forearm"] * fore

        hip = np.array([side * 0.1, 0.02, 0.0])
        thigh = _direction(side, ang["hip_abduction"], ang["hip_flexion"], -1.0)
        knee = hip + L["thigh"] * thigh
        shank = _bend(thigh, ang["knee_flexion"], [0.0, 0.0, 1.0])
        ankle = knee + L["shank"] * shank
        foot = np.array([0.0, 0.35, -1.0])
        j[f"{side_name}_hip"] = hip
        j[f"{side_name}_knee"] = knee
        j[f"{side_name}_ankle"] = ankle
        j[f"{side_name}_big_toe"] = ankle + L["foot"] * foot / np.linalg.norm(foot)
    return np.array([j[name] for name in JOINT_NAMES])


def generate_body(spec: SynthBodySpec | None = None) -> ArticulatedBody:
    spec = spec or SynthBodySpec()
    joints = skeleton_joints(spec)
    J = {name: joints[i] for i, name in enumerate(JOINT_NAMES)}
    R = spec.segment_radii
    n, k = spec.ring_resolution, spec.axial_resolution
    pid = {name: i for i, name in PART_NAMES.items()}
    limb = capsule_mesh if spec.limb_shape == "capsule" else cylinder_mesh

    parts = [
        (box_mesh([-0.16, -0.5, -0.1], [0.16, 0.06, 0.1]), pid["torso"]),
        (cylinder_mesh(J["neck"], J["neck"] + [0.0, -0.3, 0.0], 0.09, n, k), pid["head"]),
    ]
    for side in ("left", "right"):
        s, e, w = J[f"{side}_shoulder"], J[f"{side}_elbow"], J[f"{side}_wrist"]
        hand_dir = (w - e) / np.linalg.norm(w - e)
        h, kn, a, t = J[f"{side}_hip"], J[f"{side}_knee"], J[f"{side}_ankle"], J[f"{side}_big_toe"]
        parts += [
            (limb(s, e, R["upper_arm"], n, k), pid[f"{side}_upper_arm"]),
            (limb(e, w, R["forearm"], n, k), pid[f"{side}_forearm"]),
            (limb(w, w + spec.segment_lengths["hand"] * hand_dir, R["hand"], n, k), pid[f"{side}_hand"]),
            (limb(h, kn, R["thigh"], n, k), pid[f"{side}_thigh"]),
            (limb(kn, a, R["shank"], n, k), pid[f"{side}_lower_leg"]),
            (limb(a, t, R["foot"], n, k), pid[f"{side}_foot"]),
        ]
    mesh, labels = merge_meshes(parts)
    skeleton = KinematicTree(joints, JOINT_PARENTS, JOINT_NAMES)
    return ArticulatedBody(mesh, skeleton, labels, PART_NAMES)


def synth_limb_table(body: ArticulatedBody) -> dict[LimbId, LimbSpec]:
    table = {}
    for limb, (anchor, target) in LIMB_JOINTS.items():
        kept, distal = LIMB_PARTS[limb]
        table[limb] = LimbSpec(
            body.skeleton.index(anchor),
            body.skeleton.index(target),
            int(limb),
            {body.part_id(kept)},
            {body.part_id(d) for d in distal},
        )
    return table


def ground_truth_result(anchor, target, lam: float, limb: LimbId | None = None) -> RafoResult:
    """An accepted result at the true anchor/lambda, for cutting ground-truth meshes."""
    anchor = np.array(anchor, dtype=float)
    endpoint = residual_endpoint(anchor, target, lam)
    trace = OptimizationTrace(0, 0.0, 0.0, Termination.GradientTolerance)
    weights = RafoWeights(0.0, 0.0, 0.0, 1.0)
    return RafoResult(anchor, float(lam), endpoint, 0.0, True, trace, weights, limb)


def make_camera(params: CameraParams, rng: np.random.Generator) -> PinholeCamera:
    yaw = np.radians(rng.uniform(-params.yaw_range_deg, params.yaw_range_deg))
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return PinholeCamera(
        params.focal_px, params.focal_px,
        params.image_width / 2.0, params.image_height / 2.0 - 15.0,
        rot, [0.0, 0.0, params.distance_m],
        params.image_width, params.image_height,
    )


def _check_amputations(amputations: Mapping) -> dict[LimbId, float]:
    amps = {LimbId.parse(k): float(v) for k, v in amputations.items()}
    for limb, lam in amps.items():
        if not 0.0 < lam < 1.0:
            raise ValueError(f"{limb.name}: lambda {lam} must lie in (0, 1)")
    pairs = [(LimbId.LeftUpperArm, LimbId.LeftForearm), (LimbId.RightUpperArm, LimbId.RightForearm),
             (LimbId.LeftThigh, LimbId.LeftShank), (LimbId.RightThigh, LimbId.RightShank)]
    for a, b in pairs:
        if a in amps and b in amps:
            raise ValueError(f"{a.name} and {b.name} cannot both be amputated")
    return amps


def generate_scene(
    spec: SynthBodySpec | None = None,
    amputations: Mapping | None = None,
    camera_params: CameraParams | None = None,
    noise_px: float = 0.0,
    seed: int = 0,
    render_mask: bool = True,
    reconstruction: ReconstructionParams | None = None,
) -> SynthScene:
    """Body, camera, keypoints and silhouette for a set of amputations.

    ``amputations`` maps limb -> true lambda.  The intact skeleton plays the
    role of the fitted body; keypoints of the anchor joint and everything
    distal to it are marked absent.  Gaussian pixel noise (``noise_px``
    standard deviation) is added to every visible keypoint.
    """
    if noise_px < 0:
        raise ValueError("noise_px must be non-negative")
    spec = spec or SynthBodySpec()
    amps = _check_amputations(amputations or {})
    rng = np.random.default_rng(seed)
    camera = make_camera(camera_params or CameraParams(), rng)
    body = generate_body(spec)
    table = synth_limb_table(body)
    joints = body.skeleton.joints

    amputated = body
    for limb in sorted(amps):
        ls = table[limb]
        truth = ground_truth_result(joints[ls.anchor], joints[ls.target], amps[limb], limb)
        stump = reconstruct_residual_limb(amputated, truth, limb, reconstruction, ls)
        amputated = apply_stump(amputated, stump)

    body_kp = np.zeros((N_BODY, 3))
    visible = np.ones(len(joints), dtype=bool)
    for limb in amps:
        visible[list(body.skeleton.descendants(table[limb].anchor))] = False
    pix = project_points(joints, camera)
    for i, slot in enumerate(JOINT_SLOTS):
        if visible[i]:
            body_kp[slot] = [*pix[i], 1.0]
    res_kp = np.zeros((N_RESIDUAL, 3))
    for limb in sorted(amps):
        ls = table[limb]
        endpoint = residual_endpoint(joints[ls.anchor], joints[ls.target], amps[limb])
        res_kp[ls.residual_slot] = [*project(endpoint, camera), 1.0]

    noise_rng = np.random.default_rng([seed, 1])
    body_noise = noise_rng.normal(0.0, 1.0, (N_BODY, 2))
    res_noise = noise_rng.normal(0.0, 1.0, (N_RESIDUAL, 2))
    if noise_px > 0:
        body_kp[:, :2] += noise_px * body_noise * (body_kp[:, 2:] > 0)
        res_kp[:, :2] += noise_px * res_noise * (res_kp[:, 2:] > 0)

    mask = rasterize_silhouette(amputated.mesh, camera) if render_mask else None
    return SynthScene(body, amputated, camera, amps, KeypointSet2D.from_arrays(body_kp, res_kp), mask, table)


def random_amputations(rng: np.random.Generator, max_limbs: int = 2, low: float = 0.05, high: float = 0.95) -> dict:
    """One or more non-conflicting limbs with uniform lambdas in ``[low, high]``."""
    count = int(rng.integers(1, max_limbs + 1))
    groups = rng.permutation(4)[:count]
    options = [(LimbId.LeftUpperArm, LimbId.LeftForearm), (LimbId.RightUpperArm, LimbId.RightForearm),
               (LimbId.LeftThigh, LimbId.LeftShank), (LimbId.RightThigh, LimbId.RightShank)]
    return {options[g][int(rng.integers(2))]: float(rng.uniform(low, high)) for g in sorted(groups)}
