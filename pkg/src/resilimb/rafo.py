"""Residual anchor-factor optimization.

Each residual limb is modelled by an endpoint on the segment from the anchor
joint ``J_a`` (distal, e.g. the knee) toward its upstream joint ``J_t``::

    R = J_a + lam * (J_t - J_a)

and ``(J_a, lam)`` is fitted to the observed 2D endpoint by minimizing

    L = |pi(R) - k|^2 + alpha |J_a - J_a_init|^2
        + mu (|J_t - J_a| - |J_t - J_a_init|)^2

``lam`` is kept inside ``[lambda_min, lambda_max]`` by a projected outer loop
around unconstrained L-BFGS rounds.  When the clip is active and the gradient
pushes outward, ``lam`` is frozen and only the anchor is optimized.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .core import (
    MIN_DEPTH,
    ArticulatedBody,
    Keypoint2D,
    KeypointSet2D,
    LimbId,
    LimbSpec,
    PinholeCamera,
    as_vec3,
    project,
    validate_limb_table,
)
from .errors import DepthNonPositive, LambdaOutOfRange, OptimizationDiverged
from .optimizer import LbfgsConfig, OptimizationTrace, Termination, minimize

LAMBDA_INIT = 0.5


@dataclass(frozen=True, eq=False)
class ResidualLimbProblem:
    anchor_init: np.ndarray
    target: np.ndarray
    observed_endpoint: Keypoint2D
    camera: PinholeCamera
    limb_id: LimbId | None = None

    def __post_init__(self):
        a = as_vec3(self.anchor_init).copy()
        t = as_vec3(self.target).copy()
        if np.linalg.norm(t - a) <= 1e-4:
            raise ValueError("anchor and target coincide")
        if not self.observed_endpoint.confidence > 0:
            raise ValueError("observed endpoint has zero confidence")
        a.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "anchor_init", a)
        object.__setattr__(self, "target", t)
        if self.limb_id is not None:
            object.__setattr__(self, "limb_id", LimbId.parse(self.limb_id))


@dataclass(frozen=True)
class RafoWeights:
    alpha: float
    mu: float
    lambda_min: float = 0.02
    lambda_max: float = 0.98
    acceptance_threshold_px: float = 15.0

    def __post_init__(self):
        if self.alpha < 0 or self.mu < 0:
            raise ValueError("weights must be non-negative")
        if not 0 <= self.lambda_min < self.lambda_max <= 1:
            raise ValueError("need 0 <= lambda_min < lambda_max <= 1")
        if not self.acceptance_threshold_px > 0:
            raise ValueError("acceptance threshold must be positive")


@dataclass(frozen=True)
class RafoSettings:
    """Everything :func:`optimize_all_limbs` needs besides the data."""

    base_alpha: float = 1e4
    base_mu: float = 1e4
    tau_px: float = 15.0
    adaptive: bool = True
    lambda_min: float = 0.02
    lambda_max: float = 0.98
    acceptance_threshold_px: float = 15.0
    inner_iterations: int = 20
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)


@dataclass(frozen=True, eq=False)
class RafoResult:
    anchor_opt: np.ndarray
    lambda_opt: float
    endpoint_3d: np.ndarray
    reprojection_error_px: float
    accepted: bool
    trace: OptimizationTrace
    weights: RafoWeights
    limb_id: LimbId | None = None


def residual_endpoint(anchor, target, lam: float) -> np.ndarray:
    if not 0.0 <= lam <= 1.0:
        raise LambdaOutOfRange(f"lambda {lam} outside [0, 1]")
    a = as_vec3(anchor)
    return a + lam * (as_vec3(target) - a)


def _loss(x, problem: ResidualLimbProblem, weights: RafoWeights):
    """Loss and gradient at ``x = (anchor, lam)`` without range checks."""
    anchor, lam = x[:3], x[3]
    target = problem.target
    cam = problem.camera
    seg = target - anchor
    endpoint = anchor + lam * seg

    pc = cam.rotation @ endpoint + cam.translation
    if pc[2] <= MIN_DEPTH:
        raise DepthNonPositive(f"residual endpoint camera depth {pc[2]:.3g} m")
    z = pc[2]
    pix = np.array([cam.fx * pc[0] / z + cam.cx, cam.fy * pc[1] / z + cam.cy])
    jac = np.array([[cam.fx / z, 0.0, -cam.fx * pc[0] / z**2],
                    [0.0, cam.fy / z, -cam.fy * pc[1] / z**2]]) @ cam.rotation
    resid = pix - problem.observed_endpoint.position
    reproj = float(resid @ resid)
    d_endpoint = 2.0 * (jac.T @ resid)

    grad = np.empty(4)
    grad[:3] = (1.0 - lam) * d_endpoint
    grad[3] = float(d_endpoint @ seg)

    delta = anchor - problem.anchor_init
    reg = float(delta @ delta)
    grad[:3] += weights.alpha * 2.0 * delta

    seg_len = float(np.linalg.norm(seg))
    length_gap = seg_len - float(np.linalg.norm(target - problem.anchor_init))
    grad[:3] += weights.mu * 2.0 * length_gap * (-seg / seg_len)

    value = reproj + weights.alpha * reg + weights.mu * length_gap**2
    return value, grad


def rafo_loss(anchor, lam: float, problem: ResidualLimbProblem, weights: RafoWeights):
    """``(value, gradient)`` over ``(anchor_x, anchor_y, anchor_z, lam)``."""
    if not weights.lambda_min <= lam <= weights.lambda_max:
        raise LambdaOutOfRange(f"lambda {lam} outside [{weights.lambda_min}, {weights.lambda_max}]")
    return _loss(np.append(as_vec3(anchor), lam), problem, weights)


def adaptive_weights(
    initial_error_px: float,
    base_alpha: float = 1e4,
    base_mu: float = 1e4,
    tau_px: float = 15.0,
    **bounds,
) -> RafoWeights:
    """Loosen both regularizers as the initial reprojection error grows."""
    if initial_error_px < 0:
        raise ValueError("initial error must be non-negative")
    if not tau_px > 0:
        raise ValueError("tau_px must be positive")
    scale = tau_px / (tau_px + initial_error_px) if math.isfinite(initial_error_px) else 0.0
    return RafoWeights(alpha=base_alpha * scale, mu=base_mu * scale, **bounds)


def initial_error_px(problem: ResidualLimbProblem) -> float:
    """Endpoint reprojection error at the initialization (anchor_init, 0.5)."""
    endpoint = residual_endpoint(problem.anchor_init, problem.target, LAMBDA_INIT)
    return float(np.linalg.norm(project(endpoint, problem.camera) - problem.observed_endpoint.position))


def _safe_objective(fn):
    def wrapped(x):
        try:
            return fn(x)
        except DepthNonPositive:
            return np.inf, np.full(x.shape, np.nan)
    return wrapped


def optimize_residual_limb(
    problem: ResidualLimbProblem,
    weights: RafoWeights,
    config: LbfgsConfig | None = None,
    inner_iterations: int = 20,
) -> RafoResult:
    cfg = config or LbfgsConfig()
    lo, hi = weights.lambda_min, weights.lambda_max
    inner_cfg = replace(cfg, max_iterations=min(inner_iterations, cfg.max_iterations))
    rounds = max(1, math.ceil(cfg.max_iterations / inner_cfg.max_iterations))
    tol = cfg.gradient_tolerance

    x = np.append(problem.anchor_init, np.clip(LAMBDA_INIT, lo, hi))
    f_start, _ = _loss(x, problem, weights)
    full = _safe_objective(lambda v: _loss(v, problem, weights))

    frozen = False
    iterations = evaluations = 0
    values = [f_start]
    steps = []
    reason = Termination.MaxIterations
    for round_no in range(rounds):
        if frozen:
            lam = x[3]

            def anchor_only(v, lam=lam):
                f, g = full(np.append(v, lam))
                return f, g[:3]

            xa, tr = minimize(anchor_only, x[:3], inner_cfg)
            x_new = np.append(xa, lam)
        else:
            x_new, tr = minimize(full, x, inner_cfg)
        if round_no == 0 and tr.termination_reason is Termination.LineSearchFailure and tr.final_value >= f_start:
            raise OptimizationDiverged("line search failed without decreasing the loss")
        iterations += tr.iterations
        evaluations += tr.evaluations
        values.extend(tr.values[1:])
        steps.extend(tr.steps)
        reason = tr.termination_reason

        x_new[3] = np.clip(x_new[3], lo, hi)
        x = x_new
        f, g = _loss(x, problem, weights)
        pushing_out = (x[3] <= lo and g[3] > 0) or (x[3] >= hi and g[3] < 0)
        proj = g.copy()
        if pushing_out:
            proj[3] = 0.0
        if np.abs(proj).max() <= tol:
            reason = Termination.GradientTolerance
            break
        if reason is Termination.LineSearchFailure and frozen == pushing_out:
            # no progress possible in the current active set
            break
        frozen = pushing_out

    f, g = _loss(x, problem, weights)
    if (x[3] <= lo and g[3] > 0) or (x[3] >= hi and g[3] < 0):
        g[3] = 0.0
    trace = OptimizationTrace(
        iterations=iterations,
        final_value=float(f),
        final_gradient_norm=float(np.abs(g).max()),
        termination_reason=reason,
        evaluations=evaluations,
        values=values,
        steps=steps,
    )
    anchor = x[:3].copy()
    lam = float(x[3])
    endpoint = anchor + lam * (problem.target - anchor)
    err = float(np.linalg.norm(project(endpoint, problem.camera) - problem.observed_endpoint.position))
    for arr in (anchor, endpoint):
        arr.setflags(write=False)
    return RafoResult(
        anchor_opt=anchor,
        lambda_opt=lam,
        endpoint_3d=endpoint,
        reprojection_error_px=err,
        accepted=err < weights.acceptance_threshold_px,
        trace=trace,
        weights=weights,
        limb_id=problem.limb_id,
    )


def weights_for(problem: ResidualLimbProblem, settings: RafoSettings) -> RafoWeights:
    bounds = dict(
        lambda_min=settings.lambda_min,
        lambda_max=settings.lambda_max,
        acceptance_threshold_px=settings.acceptance_threshold_px,
    )
    if not settings.adaptive:
        return RafoWeights(alpha=settings.base_alpha, mu=settings.base_mu, **bounds)
    return adaptive_weights(initial_error_px(problem), settings.base_alpha, settings.base_mu, settings.tau_px, **bounds)


def solve_problem(problem: ResidualLimbProblem, settings: RafoSettings) -> RafoResult:
    return optimize_residual_limb(problem, weights_for(problem, settings), settings.lbfgs, settings.inner_iterations)


def limb_problems(
    body: ArticulatedBody,
    keypoints: KeypointSet2D,
    camera: PinholeCamera,
    limb_table: Mapping,
) -> dict[LimbId, ResidualLimbProblem]:
    """Build one problem per limb whose residual slot is observed."""
    table = validate_limb_table(limb_table, len(body.skeleton))
    joints = body.skeleton.joints
    problems = {}
    for limb in sorted(table):
        spec: LimbSpec = table[limb]
        kp = keypoints.residual[spec.residual_slot]
        if not kp.visible:
            continue
        problems[limb] = ResidualLimbProblem(joints[spec.anchor], joints[spec.target], kp, camera, limb)
    return problems


def optimize_all_limbs(
    body: ArticulatedBody,
    keypoints: KeypointSet2D,
    camera: PinholeCamera,
    limb_table: Mapping,
    config: RafoSettings | None = None,
    threads: int = 1,
) -> dict[LimbId, RafoResult]:
    """Fit every observed limb independently; results are keyed in limb order.

    Limbs whose residual keypoint has confidence 0 are skipped.
    """
    settings = config or RafoSettings()
    problems = limb_problems(body, keypoints, camera, limb_table)
    limbs = list(problems)
    if threads > 1 and len(limbs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda l: solve_problem(problems[l], settings), limbs))
    else:
        results = [solve_problem(problems[l], settings) for l in limbs]
    return dict(zip(limbs, results))
