"""Command-line entry points: ``synth``, ``fit`` and ``eval``.

Exit codes: 0 success (all observed limbs accepted), 2 at least one limb
rejected or failed, 1 fatal error (bad input, unwritable output).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .core import N_BODY, N_RESIDUAL, KeypointSet2D, LimbId, project, project_points
from .errors import ParseError, ResiLimbError, SchemaVersionMismatch, WrongSlotCount
from .meshedit import ReconstructionParams, apply_stump, compute_cut_plan, is_watertight, reconstruct_residual_limb
from .metrics import evaluate, rasterize_silhouette
from .optimizer import LbfgsConfig
from .rafo import RafoResult, RafoSettings, limb_problems, optimize_residual_limb, weights_for
from .synth import JOINT_SLOTS, CameraParams, SynthBodySpec, generate_scene

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2
REPORT_SCHEMA = 1


class CliError(Exception):
    """Fatal condition reported on stderr with exit code 1."""


@dataclass
class PipelineReport:
    settings: dict
    limbs: list = field(default_factory=list)
    absent_limbs: list = field(default_factory=list)
    mesh_watertight: bool = True
    timings_ms: dict = field(default_factory=dict)

    @property
    def all_accepted(self) -> bool:
        return all(entry["status"] == "accepted" for entry in self.limbs)

    def to_json(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA,
            "kind": "fit_report",
            "settings": self.settings,
            "limbs": self.limbs,
            "absent_limbs": self.absent_limbs,
            "mesh_watertight": self.mesh_watertight,
        }


class _Timer:
    def __init__(self, sink: dict):
        self.sink = sink

    def __call__(self, name):
        timer = self

        class _Block:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.sink[name] = timer.sink.get(name, 0.0) + 1e3 * (time.perf_counter() - self.t0)

        return _Block()


def _error_entry(exc: Exception) -> dict:
    return {"type": type(exc).__name__, "stage": getattr(exc, "stage", None), "message": str(exc)}


def _result_entry(result: RafoResult) -> dict:
    return {
        "lambda": result.lambda_opt,
        "anchor": result.anchor_opt.tolist(),
        "endpoint": result.endpoint_3d.tolist(),
        "reprojection_error_px": result.reprojection_error_px,
        "accepted": result.accepted,
        "iterations": result.trace.iterations,
        "termination": result.trace.termination_reason.value,
        "alpha": result.weights.alpha,
        "mu": result.weights.mu,
    }


# ---------------------------------------------------------------------------
# fit


def _settings_from_args(args) -> RafoSettings:
    defaults = RafoSettings()
    return RafoSettings(
        base_alpha=defaults.base_alpha if args.alpha is None else args.alpha,
        base_mu=defaults.base_mu if args.mu is None else args.mu,
        adaptive=not args.fixed_weights,
        lambda_min=args.lambda_min,
        lambda_max=args.lambda_max,
        acceptance_threshold_px=args.accept_px,
        lbfgs=LbfgsConfig(),
    )


def _solve_all(problems, settings, threads):
    def solve(limb):
        try:
            return optimize_residual_limb(problems[limb], weights_for(problems[limb], settings),
                                          settings.lbfgs, settings.inner_iterations)
        except ResiLimbError as exc:
            exc.stage = exc.stage or "rafo"
            return exc

    limbs = list(problems)
    if threads > 1 and len(limbs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return dict(zip(limbs, pool.map(solve, limbs)))
    return {limb: solve(limb) for limb in limbs}


def run_fit(body_file: io.BodyFile, keypoints: KeypointSet2D, camera, settings: RafoSettings,
            recon: ReconstructionParams, threads: int = 1):
    """Optimize and cut every observed limb.

    Returns ``(report, edited_body, joints)`` where ``joints`` holds the 33
    predicted keypoints (NaN where nothing is predicted).
    """
    timings: dict = {}
    timed = _Timer(timings)
    report = PipelineReport(settings={})
    body, table = body_file.body, body_file.limb_table

    with timed("rafo"):
        problems = limb_problems(body, keypoints, camera, table)
        results = _solve_all(problems, settings, threads)
    report.absent_limbs = [limb.name for limb in sorted(table) if limb not in problems]

    edited = body
    joints_3d = body.skeleton.joints.copy()
    residual_pred = np.full((N_RESIDUAL, 2), np.nan)
    for limb in sorted(results):
        spec = table[limb]
        outcome = results[limb]
        entry = {"limb": limb.name, "residual_slot": spec.residual_slot}
        report.limbs.append(entry)
        if isinstance(outcome, Exception):
            entry.update(status="error", error=_error_entry(outcome))
            continue
        entry.update(_result_entry(outcome))
        residual_pred[spec.residual_slot] = project(outcome.endpoint_3d, camera)
        if not outcome.accepted:
            entry["status"] = "rejected"
            continue
        joints_3d[spec.anchor] = outcome.anchor_opt
        try:
            with timed("reconstruct"):
                plan = compute_cut_plan(outcome, body.skeleton.joints[spec.target], edited, limb, spec, recon.margin)
                stump = reconstruct_residual_limb(edited, outcome, limb, recon, spec)
        except ResiLimbError as exc:
            entry.update(status="error", error=_error_entry(exc))
            continue
        edited = apply_stump(edited, stump)
        entry.update(
            status="accepted",
            cut={
                "cut_point": plan.cut_point.tolist(),
                "normal": plan.normal.tolist(),
                "margin": plan.margin,
                "h": stump.ring_offset_h,
                "shrink": stump.shrink,
                "boundary_vertices": len(stump.boundary.vertex_indices),
            },
            watertight=is_watertight(stump.mesh, np.isin(stump.part_labels, sorted(plan.limb_part_ids))[stump.mesh.faces].all(axis=1)),
        )

    with timed("verify"):
        report.mesh_watertight = is_watertight(edited.mesh)
    report.timings_ms = timings

    body_pred = np.full((N_BODY, 2), np.nan)
    slots = body_file.keypoint_slots
    if slots:
        pix = project_points(joints_3d, camera)
        for j, slot in enumerate(slots):
            if slot >= 0:
                body_pred[slot] = pix[j]
    return report, edited, np.vstack([body_pred, residual_pred])


def _nullable(arr) -> list:
    return [None if not np.all(np.isfinite(p)) else [float(p[0]), float(p[1])] for p in arr]


def save_joints(path, joints, residual_segments):
    io._write(path, {
        "schema_version": io.SCHEMA_VERSION,
        "kind": "joints",
        "body": _nullable(joints[:N_BODY]),
        "residual": _nullable(joints[N_BODY:]),
        "residual_segments": [None if s is None else list(s) for s in residual_segments],
    })


def load_joints(path):
    """Predicted joints as a (33, 2) array (NaN for null) plus residual segments."""
    path = Path(path)
    doc = io._read(path, "joints")
    rows = []
    for key, count in (("body", N_BODY), ("residual", N_RESIDUAL)):
        entries = io._section(doc, key, path)
        if len(entries) != count:
            raise WrongSlotCount(f"{path}: {key} has {len(entries)} entries, expected {count}")
        for i, e in enumerate(entries):
            if e is None:
                rows.append([np.nan, np.nan])
            elif isinstance(e, list) and len(e) == 2 and all(isinstance(v, (int, float)) for v in e):
                rows.append([float(e[0]), float(e[1])])
            else:
                raise ParseError(f"{path}: {key}[{i}] must be [x, y] or null")
    segments = doc.get("residual_segments") or [None] * N_RESIDUAL
    segments = [None if s is None else (int(s[0]), int(s[1])) for s in segments]
    return np.array(rows), segments


def cmd_fit(args) -> int:
    body_file = io.load_body(args.body)
    keypoints = io.load_keypoints(args.keypoints)
    camera = io.load_camera(args.camera)
    settings = _settings_from_args(args)
    recon = ReconstructionParams(margin=args.margin, h=args.h, shrink=args.shrink)

    report, edited, joints = run_fit(body_file, keypoints, camera, settings, recon, args.threads)
    report.settings = {
        "lambda_min": settings.lambda_min,
        "lambda_max": settings.lambda_max,
        "accept_px": settings.acceptance_threshold_px,
        "base_alpha": settings.base_alpha,
        "base_mu": settings.base_mu,
        "adaptive_weights": settings.adaptive,
        "margin": recon.margin,
        "h": recon.h,
        "shrink": recon.shrink,
        "seed": args.seed,
    }
    t0 = time.perf_counter()
    mask = rasterize_silhouette(edited.mesh, camera)
    report.timings_ms["rasterize"] = 1e3 * (time.perf_counter() - t0)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_mesh_obj(edited.mesh, out / "mesh.obj")
    io.save_mask(out / "mask.pgm", mask)
    save_joints(out / "joints.json", joints, body_file.residual_segments())
    io._write(out / "report.json", report.to_json())
    (out / "timings.json").write_text(json.dumps({k: round(v, 3) for k, v in sorted(report.timings_ms.items())}, indent=2) + "\n")

    for entry in report.limbs:
        err = entry.get("reprojection_error_px")
        detail = f"lambda={entry['lambda']:.4f} err={err:.2f}px" if err is not None else entry["error"]["type"]
        print(f"{entry['limb']}: {entry['status']} ({detail})")
    for name in report.absent_limbs:
        print(f"{name}: absent")
    return EXIT_OK if report.all_accepted else EXIT_PARTIAL


# ---------------------------------------------------------------------------
# eval


def format_report(rep) -> str:
    def num(v, digits=2):
        return "absent" if not np.isfinite(v) else f"{v:.{digits}f}"

    return "\n".join([
        f"mpjpe_body_px: {num(rep.mpjpe_body_px)}",
        f"mpjpe_residual_px: {num(rep.mpjpe_residual_px)}",
        f"mpjpe_full_px: {num(rep.mpjpe_full_px)}",
        f"miou: {num(rep.miou, 3)}",
        f"visible_body: {rep.visible_body}",
        f"visible_residual: {rep.visible_residual}",
    ]) + "\n"


def cmd_eval(args) -> int:
    mesh = io.load_mesh_obj(args.pred_mesh)
    joints, segments = load_joints(args.pred_joints)
    gt = io.load_keypoints(args.gt_keypoints)
    gt_mask = io.load_mask(args.gt_mask)
    camera = io.load_camera(args.camera)
    rep = evaluate(mesh, joints, gt, gt_mask, camera, baseline=args.baseline, residual_segments=segments)
    sys.stdout.write(format_report(rep))
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth


def _load_json_arg(value: str, what: str):
    """Inline JSON or a path to a JSON file."""
    text = value
    if not value.lstrip().startswith("{"):
        try:
            text = Path(value).read_text()
        except OSError as exc:
            raise CliError(f"cannot read {what} {value!r}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def parse_synth_spec(doc) -> tuple[SynthBodySpec, CameraParams]:
    if not isinstance(doc, dict):
        raise ParseError("synth spec: top level must be an object")
    doc = dict(doc)
    version = doc.pop("schema_version", io.SCHEMA_VERSION)
    if version != io.SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"synth spec: schema_version {version}, expected {io.SCHEMA_VERSION}")
    cam_doc = doc.pop("camera", {})
    try:
        return SynthBodySpec(**doc), CameraParams(**cam_doc)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"synth spec: {exc}") from None


def parse_amputations(doc) -> dict:
    if not isinstance(doc, dict):
        raise ParseError("amputation spec: expected an object mapping limb name to lambda")
    out = {}
    for key, lam in doc.items():
        try:
            limb = LimbId.parse(key)
        except ValueError as exc:
            raise ParseError(f"amputation spec: {exc}") from None
        if not isinstance(lam, (int, float)) or not 0 <= lam <= 1:
            raise ParseError(f"amputation spec: {key}: lambda must be a number in [0, 1]")
        out[limb] = float(lam)
    return out


def cmd_synth(args) -> int:
    spec, cam_params = parse_synth_spec(_load_json_arg(args.spec, "synth spec") if args.spec else {})
    amputations = parse_amputations(_load_json_arg(args.amputations, "amputation spec") if args.amputations else {})
    try:
        scene = generate_scene(spec, amputations, cam_params, args.noise_px, args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_body(out / "body.json", scene.body, scene.limb_table, JOINT_SLOTS)
    io.save_keypoints(out / "keypoints.json", scene.gt_keypoints)
    io.save_camera(out / "camera.json", scene.camera)
    io.save_mask(out / "mask.pgm", scene.gt_mask)
    io.save_mesh_obj(scene.amputated_body.mesh, out / "gt_mesh.obj")
    joints = scene.body.skeleton.joints
    io._write(out / "truth.json", {
        "schema_version": io.SCHEMA_VERSION,
        "kind": "truth",
        "seed": args.seed,
        "noise_px": args.noise_px,
        "limbs": [
            {
                "limb": limb.name,
                "lambda": lam,
                "anchor": joints[scene.limb_table[limb].anchor].tolist(),
                "target": joints[scene.limb_table[limb].target].tolist(),
            }
            for limb, lam in sorted(scene.true_lambda.items())
        ],
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resilimb", description="Residual-limb fitting and stump sealing")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="optimize residual limbs and seal the body mesh")
    fit.add_argument("body", help="body JSON (mesh, skeleton, part labels, limb table)")
    fit.add_argument("keypoints", help="observed 25 + 8 keypoints JSON")
    fit.add_argument("camera", help="pinhole camera JSON")
    fit.add_argument("out_dir", help="written only after all inputs load")
    fit.add_argument("--lambda-min", type=float, default=0.02, help="lower clip for the length factor")
    fit.add_argument("--lambda-max", type=float, default=0.98, help="upper clip for the length factor")
    fit.add_argument("--accept-px", type=float, default=15.0, help="reprojection threshold for accepting a limb")
    fit.add_argument("--alpha", type=float, help="base anchor regularization weight")
    fit.add_argument("--mu", type=float, help="base length-preservation weight")
    fit.add_argument("--fixed-weights", action="store_true", help="disable error-adaptive weight scaling")
    fit.add_argument("--margin", type=float, help="cut band half-width in metres")
    fit.add_argument("--h", type=float, help="seal ring offset in metres")
    fit.add_argument("--shrink", type=float, default=ReconstructionParams().shrink, help="seal ring shrink factor")
    fit.add_argument("--threads", type=int, default=1, help="per-limb worker threads")
    fit.add_argument("--seed", type=int, default=0, help="recorded in the report; the fit is deterministic")
    fit.set_defaults(func=cmd_fit)

    ev = sub.add_parser("eval", help="score predicted joints and mesh against ground truth")
    ev.add_argument("pred_mesh", help="edited mesh OBJ")
    ev.add_argument("pred_joints", help="joints.json from fit")
    ev.add_argument("gt_keypoints", help="ground-truth keypoints JSON")
    ev.add_argument("gt_mask", help="ground-truth silhouette (PGM or PNG)")
    ev.add_argument("camera", help="pinhole camera JSON")
    ev.add_argument("--baseline", choices=["midpoint"], help="replace residual predictions by a proxy")
    ev.set_defaults(func=cmd_eval)

    syn = sub.add_parser("synth", help="generate a synthetic amputee scene")
    syn.add_argument("out_dir", help="scene directory to create")
    syn.add_argument("--spec", help="body/camera spec as JSON text or file (default body if omitted)")
    syn.add_argument("--amputations", help='JSON text or file, e.g. {"LeftShank": 0.4}')
    syn.add_argument("--noise-px", type=float, default=0.0, help="Gaussian keypoint noise (pixels)")
    syn.add_argument("--seed", type=int, default=0, help="camera and noise seed")
    syn.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_FATAL
    try:
        return args.func(args)
    except (ResiLimbError, CliError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
