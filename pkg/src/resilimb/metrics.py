"""2D MPJPE over keypoint subsets and silhouette IoU."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MIN_DEPTH, N_BODY, N_FULL, N_RESIDUAL, KeypointSet2D, PinholeCamera, TriangleMesh
from .errors import DimensionMismatch, MissingPrediction, NoVisibleKeypoints, VertexBehindCamera


@dataclass(frozen=True, eq=False)
class BinaryMask:
    width: int
    height: int
    bits: np.ndarray  # (height, width) bool, row-major

    def __post_init__(self):
        w, h = int(self.width), int(self.height)
        if w <= 0 or h <= 0:
            raise ValueError("mask dimensions must be positive")
        bits = np.array(self.bits, dtype=bool)
        if bits.size != w * h:
            raise ValueError(f"expected {w * h} bits, got {bits.size}")
        bits = bits.reshape(h, w)
        bits.setflags(write=False)
        object.__setattr__(self, "width", w)
        object.__setattr__(self, "height", h)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(width, height, np.zeros((height, width), dtype=bool))

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class EvalReport:
    mpjpe_body_px: float
    mpjpe_residual_px: float
    mpjpe_full_px: float
    miou: float
    per_joint_errors_px: list = field(default_factory=list)
    visible_body: int = 0
    visible_residual: int = 0

    @property
    def residual_absent(self) -> bool:
        return self.visible_residual == 0


def mpjpe_2d(predicted, observed) -> float:
    """Mean Euclidean pixel error over the keypoints with confidence > 0."""
    pred = np.asarray(predicted, dtype=float).reshape(-1, 2)
    if len(pred) != len(observed):
        raise DimensionMismatch(f"{len(pred)} predictions for {len(observed)} keypoints")
    vis = np.array([k.confidence > 0 for k in observed], dtype=bool)
    if not vis.any():
        raise NoVisibleKeypoints("no keypoint has positive confidence")
    obs = np.array([k.position for k in observed]).reshape(-1, 2)
    return float(np.mean(np.linalg.norm(pred[vis] - obs[vis], axis=1)))


def _owns_ties(ex, ey):
    # exactly one of two triangles sharing an edge owns pixels centred on it
    return (ey < 0) | ((ey == 0) & (ex > 0))


def _inside(px, py, tri, owns):
    """Edge-function test for pixel centres against positively oriented triangles.

    ``px, py`` broadcast against ``tri[..., k, :]``.
    """
    inside = None
    for k in range(3):
        a = tri[..., k, :]
        b = tri[..., (k + 1) % 3, :]
        ex, ey = b[..., 0] - a[..., 0], b[..., 1] - a[..., 1]
        w = ex * (py - a[..., 1]) - ey * (px - a[..., 0])
        ok = (w > 0) | ((w == 0) & owns[k])
        inside = ok if inside is None else inside & ok
    return inside


def rasterize_silhouette(mesh: TriangleMesh, cam: PinholeCamera) -> BinaryMask:
    """Binary coverage of pixel centres ``(x + 0.5, y + 0.5)`` by projected faces.

    Triangles are processed in batches grouped by bounding-box size so the
    work is vectorized; coverage is a pure union, so the result does not
    depend on the grouping.
    """
    W, H = cam.image_width, cam.image_height
    bits = np.zeros((H, W), dtype=bool)
    if mesh.n_faces == 0:
        return BinaryMask(W, H, bits)
    pc = cam.to_camera(mesh.vertices)
    bad = np.flatnonzero(pc[:, 2] <= MIN_DEPTH)
    if bad.size:
        raise VertexBehindCamera(bad[0])
    uv = np.column_stack([cam.fx * pc[:, 0] / pc[:, 2] + cam.cx, cam.fy * pc[:, 1] / pc[:, 2] + cam.cy])
    tri = uv[mesh.faces]
    area = ((tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1])
            - (tri[:, 1, 1] - tri[:, 0, 1]) * (tri[:, 2, 0] - tri[:, 0, 0]))
    tri = tri[area != 0]
    area = area[area != 0]
    flip = area < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]

    # pixel index ranges whose centres may be covered
    x0 = np.clip(np.ceil(tri[:, :, 0].min(axis=1) - 0.5), 0, W).astype(np.int64)
    x1 = np.clip(np.floor(tri[:, :, 0].max(axis=1) - 0.5) + 1, 0, W).astype(np.int64)
    y0 = np.clip(np.ceil(tri[:, :, 1].min(axis=1) - 0.5), 0, H).astype(np.int64)
    y1 = np.clip(np.floor(tri[:, :, 1].max(axis=1) - 0.5) + 1, 0, H).astype(np.int64)
    keep = (x1 > x0) & (y1 > y0)
    tri, x0, x1, y0, y1 = tri[keep], x0[keep], x1[keep], y0[keep], y1[keep]
    owns = []
    for k in range(3):
        e = tri[:, (k + 1) % 3] - tri[:, k]
        owns.append(_owns_ties(e[:, 0], e[:, 1]))
    owns = np.stack(owns, axis=1)

    span = np.maximum(x1 - x0, y1 - y0)
    bucket = np.ceil(np.log2(np.maximum(span, 1))).astype(np.int64)
    for b in np.unique(bucket):
        idx = np.flatnonzero(bucket == b)
        size = 1 << int(b)
        # cap the per-batch grid to bound memory
        step = max(1, (1 << 22) // (size * size))
        for start in range(0, len(idx), step):
            sel = idx[start:start + step]
            gx = x0[sel, None, None] + np.arange(size)[None, None, :]
            gy = y0[sel, None, None] + np.arange(size)[None, :, None]
            valid = (gx < x1[sel, None, None]) & (gy < y1[sel, None, None])
            t = tri[sel][:, None, None]
            o = [owns[sel, k][:, None, None] for k in range(3)]
            hit = valid & _inside(gx + 0.5, gy + 0.5, t, o)
            n, r, c = np.nonzero(hit)
            bits[gy[n, r, 0], gx[n, 0, c]] = True
    return BinaryMask(W, H, bits)


def miou(a: BinaryMask, b: BinaryMask) -> float:
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(f"mask sizes {a.width}x{a.height} and {b.width}x{b.height} differ")
    union = np.logical_or(a.bits, b.bits).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a.bits, b.bits).sum() / union)


def midpoint_proxy(body_predictions, residual_segments) -> np.ndarray:
    """Residual predictions at the midpoint of each limb segment's two body slots.

    ``residual_segments[r]`` is ``(anchor_slot, target_slot)`` or ``None``.
    """
    body = np.asarray(body_predictions, dtype=float).reshape(N_BODY, 2)
    out = np.full((N_RESIDUAL, 2), np.nan)
    for r, seg in enumerate(residual_segments):
        if seg is not None:
            out[r] = 0.5 * (body[seg[0]] + body[seg[1]])
    return out


def evaluate(
    body_mesh: TriangleMesh,
    joint_projections,
    gt_keypoints: KeypointSet2D,
    gt_mask: BinaryMask,
    cam: PinholeCamera,
    *,
    baseline: str | None = None,
    residual_segments=None,
) -> EvalReport:
    """Score 33 predicted keypoints (25 body then 8 residual) and the silhouette.

    With ``baseline="midpoint"`` the residual predictions are replaced by the
    midpoint proxy computed from the body predictions and ``residual_segments``.
    Subsets without visible ground truth are reported as NaN.
    """
    pred = np.asarray(joint_projections, dtype=float).reshape(-1, 2)
    if len(pred) != N_FULL:
        raise DimensionMismatch(f"expected {N_FULL} joint projections, got {len(pred)}")
    if baseline == "midpoint":
        if residual_segments is None:
            raise ValueError("midpoint baseline needs residual_segments")
        pred = pred.copy()
        pred[N_BODY:] = midpoint_proxy(pred[:N_BODY], residual_segments)
    elif baseline is not None:
        raise ValueError(f"unknown baseline {baseline!r}")

    observed = gt_keypoints.all
    errors = []
    for i, kp in enumerate(observed):
        if kp.confidence > 0:
            if not np.all(np.isfinite(pred[i])):
                raise MissingPrediction(f"no prediction for visible keypoint slot {i}")
            errors.append(float(np.linalg.norm(pred[i] - kp.position)))
        else:
            errors.append(float("nan"))
    errs = np.array(errors)

    def subset_mean(sl):
        e = errs[sl]
        e = e[np.isfinite(e)]
        return float(e.mean()) if e.size else float("nan")

    mask = rasterize_silhouette(body_mesh, cam)
    return EvalReport(
        mpjpe_body_px=subset_mean(slice(0, N_BODY)),
        mpjpe_residual_px=subset_mean(slice(N_BODY, N_FULL)),
        mpjpe_full_px=subset_mean(slice(0, N_FULL)),
        miou=miou(mask, gt_mask),
        per_joint_errors_px=errors,
        visible_body=int(np.isfinite(errs[:N_BODY]).sum()),
        visible_residual=int(np.isfinite(errs[N_BODY:]).sum()),
    )
