import numpy as np
import pytest
from hypothesis import given, strategies as st

from resilimb.core import LimbId, TriangleMesh
from resilimb.errors import (
    DegenerateLoop,
    DegenerateSegment,
    LoopCollapsed,
    NoBandVertices,
    NonManifoldBoundary,
    RejectedRafoResult,
    SelfIntersectingSeal,
    UnknownPartId,
)
from resilimb.meshedit import (
    BoundaryLoop,
    CutPlan,
    ReconstructionParams,
    apply_stump,
    cap_hull_violation,
    coarse_prune,
    compute_cut_plan,
    edge_multiplicity,
    euler_characteristics,
    extract_boundary_loops,
    face_components,
    fine_cut,
    fit_boundary_plane,
    is_consistently_oriented,
    is_watertight,
    prune_boundary_spikes,
    reconstruct_residual_limb,
    remove_vertices,
    seal_stump,
    triangle_pairs_intersecting,
)
from resilimb.rafo import RafoResult
from resilimb.synth import box_mesh, ground_truth_result, synth_limb_table

from limbs import LIMB, open_tube, truth, tube_with_top_rim, two_segment_arm


def top_rim(mesh):
    loops = extract_boundary_loops(mesh)
    z = [mesh.vertices[list(l.vertex_indices), 2].mean() for l in loops]
    return loops[int(np.argmax(z))]


# ---------------------------------------------------------------------------
# cut plan


def test_cut_plan_example():
    body, spec = two_segment_arm()
    r = ground_truth_result([0, 0, 0], [0, 1, 0], 0.5)
    plan = compute_cut_plan(r, [0, 1, 0], body, LIMB, spec, margin=0.01)
    assert np.array_equal(plan.cut_point, [0, 0.5, 0])
    assert np.array_equal(plan.normal, [0, -1, 0])
    assert plan.limb_part_ids == {0} and plan.distal_part_ids == {1}
    assert plan.signed_distance(plan.cut_point) == 0.0


def test_cut_plan_lower_clip_is_near_anchor():
    body, spec = two_segment_arm()
    a, t = np.array([0.1, -0.3, 0.2]), np.array([0.0, 0.1, 0.25])
    plan = compute_cut_plan(ground_truth_result(a, t, 0.02), t, body, LIMB, spec)
    assert np.linalg.norm(plan.cut_point - a) <= 0.02 * np.linalg.norm(t - a) + 1e-15


def test_cut_plan_gates():
    body, spec = two_segment_arm()
    r = ground_truth_result([0, 0, 0], [0, 1, 0], 0.5)
    rejected = RafoResult(r.anchor_opt, r.lambda_opt, r.endpoint_3d, 99.0, False, r.trace, r.weights)
    with pytest.raises(RejectedRafoResult):
        compute_cut_plan(rejected, [0, 1, 0], body, LIMB, spec)
    with pytest.raises(DegenerateSegment):
        compute_cut_plan(r, [0, 0, 5e-7], body, LIMB, spec)
    from resilimb.core import LimbSpec

    with pytest.raises(UnknownPartId):
        compute_cut_plan(r, [0, 1, 0], body, LIMB, LimbSpec(1, 0, 3, {0}, {7}))


def test_default_margin_is_twice_median_edge():
    body, spec = two_segment_arm(ring=16, axial=24)
    plan = compute_cut_plan(truth(body, spec, 0.5), body.skeleton.joints[0], body, LIMB, spec)
    faces = body.mesh.faces[(body.part_labels[body.mesh.faces] == 0).all(axis=1)]
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    lengths = np.linalg.norm(body.mesh.vertices[e[:, 0]] - body.mesh.vertices[e[:, 1]], axis=1)
    assert plan.margin == pytest.approx(2 * np.median(lengths), rel=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_cut_plan_matches_hand_substitution(seed):
    rng = np.random.default_rng(seed)
    body, spec = two_segment_arm()
    a, t, lam = rng.normal(size=3), rng.normal(size=3), rng.uniform(0.02, 0.98)
    plan = compute_cut_plan(ground_truth_result(a, t, lam), t, body, LIMB, spec, margin=0.01)
    p = [a[i] + lam * (t[i] - a[i]) for i in range(3)]
    length = sum((a[i] - t[i]) ** 2 for i in range(3)) ** 0.5
    n = [(a[i] - t[i]) / length for i in range(3)]
    np.testing.assert_allclose(plan.cut_point, p, rtol=0, atol=1e-12)
    np.testing.assert_allclose(plan.normal, n, rtol=0, atol=1e-12)


def test_cut_plan_invariants():
    with pytest.raises(ValueError):
        CutPlan([0, 0, 0], [0, 0, 2], 0.1, {0}, {1})
    with pytest.raises(ValueError):
        CutPlan([0, 0, 0], [0, 0, 1], 0.0, {0}, {1})
    with pytest.raises(ValueError):
        CutPlan([0, 0, 0], [0, 0, 1], 0.1, {0}, {0})


# ---------------------------------------------------------------------------
# coarse prune


def test_empty_prune_is_identity():
    body, _ = two_segment_arm()
    plan = CutPlan([0, 0, -0.15], [0, 0, -1], 0.01, {0}, set())
    mesh, keep = coarse_prune(body, plan)
    assert mesh is body.mesh and keep.all()


def test_prune_hand_removes_exactly_its_vertices(default_body):
    hand = default_body.part_id("left_hand")
    n_hand = int(np.sum(default_body.part_labels == hand))
    plan = CutPlan([0, 0, 0], [0, 0, 1], 0.01, {default_body.part_id("left_forearm")}, {hand})
    mesh, keep = coarse_prune(default_body, plan)
    assert mesh.n_vertices == default_body.mesh.n_vertices - n_hand
    assert mesh.faces.max() < mesh.n_vertices
    assert not np.any(default_body.part_labels[keep] == hand)
    # every surviving face maps back onto an original face
    old = np.flatnonzero(keep)
    original = {tuple(f) for f in default_body.mesh.faces.tolist()}
    assert all(tuple(old[f]) in original for f in mesh.faces)


def test_prune_unknown_part():
    body, _ = two_segment_arm()
    with pytest.raises(UnknownPartId):
        coarse_prune(body, CutPlan([0, 0, 0], [0, 0, 1], 0.01, {0}, {9}))


# ---------------------------------------------------------------------------
# fine cut


def test_cylinder_mid_cut_gives_64_vertex_rim():
    tube = open_tube(64, 100)
    plan = CutPlan([0, 0, 0.5], [0, 0, 1], 0.015, {0}, set())
    phi_before = plan.signed_distance(tube.vertices)
    res = fine_cut(tube, plan, np.ones(tube.n_vertices, bool))
    assert len(res.raw_boundary) == 64
    removed = ~res.kept_vertex_mask
    assert removed.any() and np.all(phi_before[removed] > plan.margin)
    rim_z = res.mesh.vertices[list(res.raw_boundary.vertex_indices), 2]
    assert np.ptp(rim_z) == 0 and abs(rim_z[0] - 0.5) < plan.margin


def test_cut_beyond_far_cap_has_no_band():
    tube = open_tube(16, 10)
    with pytest.raises(NoBandVertices):
        fine_cut(tube, CutPlan([0, 0, 1.5], [0, 0, 1], 0.05, {0}, set()), np.ones(tube.n_vertices, bool))


def test_fine_cut_leaves_no_vertex_beyond_margin():
    body, spec = two_segment_arm(ring=24, axial=40)
    plan = compute_cut_plan(truth(body, spec, 0.35), body.skeleton.joints[0], body, LIMB, spec)
    pruned, keep = coarse_prune(body, plan)
    region = body.part_labels[keep] == 0
    res = fine_cut(pruned, plan, region)
    phi = plan.signed_distance(res.mesh.vertices[region[res.kept_vertex_mask]])
    assert phi.max() <= plan.margin


# ---------------------------------------------------------------------------
# boundary loops


def test_closed_cube_has_no_loops():
    assert extract_boundary_loops(box_mesh([0, 0, 0], [1, 1, 1])) == []


def test_single_triangle_loop():
    loops = extract_boundary_loops(TriangleMesh(np.eye(3), [[0, 1, 2]]))
    assert len(loops) == 1 and loops[0].vertex_indices == (0, 1, 2)


def test_open_cylinder_has_two_loops():
    loops = extract_boundary_loops(open_tube(12, 5))
    assert [len(l) for l in loops] == [12, 12]


def test_loops_follow_owning_face_direction():
    mesh = open_tube(12, 5)
    directed = {tuple(e) for f in mesh.faces.tolist() for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0]))}
    _, counts = edge_multiplicity(mesh.faces)
    for loop in extract_boundary_loops(mesh):
        v = loop.vertex_indices
        for a, b in zip(v, v[1:] + v[:1]):
            assert (a, b) in directed and (b, a) not in directed


def test_bowtie_is_non_manifold():
    verts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0]]
    with pytest.raises(NonManifoldBoundary) as info:
        extract_boundary_loops(TriangleMesh(verts, [[0, 1, 2], [0, 3, 4]]))
    assert info.value.vertices == [0]


# ---------------------------------------------------------------------------
# spikes


def _add_spike(mesh, a, b, point):
    """Attach triangle (b, a, p) on boundary edge a->b."""
    verts = np.vstack([mesh.vertices, point])
    p = mesh.n_vertices
    return TriangleMesh(verts, np.vstack([mesh.faces, [[b, a, p]]])), p


def test_clean_rim_is_fixed_point():
    tube = tube_with_top_rim(16)
    rim = top_rim(tube)
    res = prune_boundary_spikes(tube, rim)
    assert res.iterations == 0 and res.loop == rim and res.mesh is tube


def test_single_spike_removed():
    tube = tube_with_top_rim(16)
    rim = top_rim(tube)
    a, b = rim.vertex_indices[:2]
    spiky, p = _add_spike(tube, a, b, tube.vertices[[a, b]].mean(axis=0) + [0, 0, 0.05])
    loop = top_rim(spiky)
    assert len(loop) == 17 and p in loop.vertex_indices
    res = prune_boundary_spikes(spiky, loop)
    assert res.iterations == 1 and len(res.loop) == 16
    assert not res.kept_vertex_mask[p] and res.kept_vertex_mask[:p].all()
    assert is_consistently_oriented(res.mesh)


def test_stacked_spikes_take_two_iterations():
    tube = tube_with_top_rim(16)
    rim = top_rim(tube)
    a, b = rim.vertex_indices[:2]
    m1, p = _add_spike(tube, a, b, tube.vertices[[a, b]].mean(axis=0) + [0, 0, 0.05])
    m2, q = _add_spike(m1, a, p, m1.vertices[[a, p]].mean(axis=0) + [0, 0, 0.05])
    res = prune_boundary_spikes(m2, top_rim(m2))
    assert res.iterations == 2 and len(res.loop) == 16
    assert res.mesh.n_vertices == tube.n_vertices


def test_lone_triangle_collapses():
    tri = TriangleMesh(np.eye(3), [[0, 1, 2]])
    with pytest.raises(LoopCollapsed):
        prune_boundary_spikes(tri, extract_boundary_loops(tri)[0])


# ---------------------------------------------------------------------------
# plane fit


def ring_points(n=32, z=0.5, r=0.1):
    t = 2 * np.pi * np.arange(n) / n
    return np.column_stack([r * np.cos(t), r * np.sin(t), np.full(n, z)])


def test_plane_of_flat_ring():
    c, n = fit_boundary_plane(ring_points(), reference_normal=[0, 0, -1])
    assert c[2] == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(n, [0, 0, -1], atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_plane_of_noisy_ring(seed):
    rng = np.random.default_rng(seed)
    pts = ring_points() + rng.uniform(-1e-4, 1e-4, (32, 3))
    _, n = fit_boundary_plane(pts, [0, 0, 1])
    assert np.arccos(min(1.0, n @ [0, 0, 1])) < 0.01


def test_collinear_points_are_degenerate():
    with pytest.raises(DegenerateLoop):
        fit_boundary_plane([[0, 0, 0], [1, 1, 1], [2, 2, 2]])


# ---------------------------------------------------------------------------
# sealing


def test_seal_64_rim_counts():
    tube = tube_with_top_rim(64)
    rim = top_rim(tube)
    plane = fit_boundary_plane(tube.vertices[list(rim.vertex_indices)], [0, 0, 1])
    stump = seal_stump(tube, rim, plane, h=0.005, shrink=0.6)
    # two rings of 64 plus the apex; strips give 2n faces each, the fan n
    assert stump.new_vertex_range == (tube.n_vertices, tube.n_vertices + 129)
    assert stump.new_face_range[1] - stump.new_face_range[0] == 2 * 64 + 2 * 64 + 64
    assert is_watertight(stump.mesh) and is_consistently_oriented(stump.mesh)
    assert extract_boundary_loops(stump.mesh) == []


def test_seal_triangle_rim_counts():
    tube = tube_with_top_rim(3, axial=2)
    rim = top_rim(tube)
    assert len(rim) == 3
    plane = fit_boundary_plane(tube.vertices[list(rim.vertex_indices)], [0, 0, 1])
    stump = seal_stump(tube, rim, plane, h=0.01)
    assert stump.mesh.n_vertices - tube.n_vertices == 7
    assert stump.mesh.n_faces - tube.n_faces == 15
    assert is_watertight(stump.mesh) and list(euler_characteristics(stump.mesh).values()) == [2]


def test_seal_geometry():
    tube = tube_with_top_rim(16)
    rim = top_rim(tube)
    c, n = fit_boundary_plane(tube.vertices[list(rim.vertex_indices)], [0, 0, 1])
    stump = seal_stump(tube, rim, (c, n), h=0.01, shrink=0.5)
    new = stump.mesh.vertices[stump.new_vertex_range[0]:]
    np.testing.assert_allclose(new[-1], c + 0.03 * n, atol=1e-15)
    rim_pts = tube.vertices[list(stump.boundary.vertex_indices)]
    np.testing.assert_allclose(new[:16], c + 0.5 * (rim_pts - c) + 0.01 * n, atol=1e-15)
    np.testing.assert_allclose(new[16:32], c + 0.25 * (rim_pts - c) + 0.02 * n, atol=1e-15)


def test_seal_argument_checks():
    tube = tube_with_top_rim(8)
    rim = top_rim(tube)
    plane = fit_boundary_plane(tube.vertices[list(rim.vertex_indices)], [0, 0, 1])
    for kwargs in ({"h": 0.0}, {"h": 0.01, "shrink": 1.0}):
        with pytest.raises(ValueError):
            seal_stump(tube, rim, plane, **kwargs)
    with pytest.raises(ValueError):
        seal_stump(tube, BoundaryLoop(rim.vertex_indices, is_closed=False), plane, 0.01)


def test_seal_through_obstacle_is_reported():
    tube = tube_with_top_rim(16)
    rim = top_rim(tube)
    plane = fit_boundary_plane(tube.vertices[list(rim.vertex_indices)], [0, 0, 1])
    # a plate across the axis, 1.5 h above the rim, cuts through the cap
    n = tube.n_vertices
    plate = np.array([[-1, -1, 1.015], [1, -1, 1.015], [0, 1, 1.015]])
    blocked = TriangleMesh(np.vstack([tube.vertices, plate]), np.vstack([tube.faces, [[n, n + 1, n + 2]]]))
    with pytest.raises(SelfIntersectingSeal) as info:
        seal_stump(blocked, rim, plane, h=0.01)
    assert info.value.mesh is blocked and info.value.pairs


def test_triangle_intersection_oracle():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0],
                      [0.2, 0.2, -1], [0.2, 0.2, 1], [0.3, 0.25, 1],
                      [5, 5, -1], [5, 5, 1], [6, 5, 1]], float)
    hits = triangle_pairs_intersecting(verts, np.array([[0, 1, 2]]), np.array([[3, 4, 5], [6, 7, 8]]))
    assert hits == [(0, 0)]
    # shared vertices never count
    assert triangle_pairs_intersecting(verts, np.array([[0, 1, 2]]), np.array([[0, 4, 5]])) == []


@given(st.integers(3, 96), st.floats(0.05, 0.57), st.floats(1e-3, 0.05))
def test_cap_inside_hull_of_rim_and_apex(n, shrink, h):
    tube = tube_with_top_rim(n, axial=2)
    rim = top_rim(tube)
    plane = fit_boundary_plane(tube.vertices[list(rim.vertex_indices)], [0, 0, 1])
    stump = seal_stump(tube, rim, plane, h=h, shrink=shrink)
    assert cap_hull_violation(stump) <= 1e-9
    assert is_watertight(stump.mesh) and is_consistently_oriented(stump.mesh)


def test_shrink_above_inverse_sqrt3_leaves_hull():
    tube = tube_with_top_rim(64, axial=2)
    rim = top_rim(tube)
    plane = fit_boundary_plane(tube.vertices[list(rim.vertex_indices)], [0, 0, 1])
    assert cap_hull_violation(seal_stump(tube, rim, plane, h=0.01, shrink=0.6)) > 1e-9


# ---------------------------------------------------------------------------
# full reconstruction


def limb_component_checks(stump, kept_label):
    mesh = stump.mesh
    comp = face_components(mesh)
    limb_comp = comp[stump.new_vertex_range[0]]
    faces = comp[mesh.faces[:, 0]] == limb_comp
    assert is_watertight(mesh, faces)
    assert is_consistently_oriented(mesh)
    assert euler_characteristics(mesh)[int(limb_comp)] == 2
    assert np.all(stump.part_labels[stump.new_vertex_range[0]:] == kept_label)


def test_two_segment_arm_half_cut():
    body, spec = two_segment_arm()
    r = truth(body, spec, 0.5)
    stump = reconstruct_residual_limb(body, r, LIMB, None, spec)
    assert not np.any(stump.part_labels == 1)
    plan = compute_cut_plan(r, body.skeleton.joints[0], body, LIMB, spec)
    centroid, _ = stump.plane
    assert np.linalg.norm(centroid - plan.cut_point) < plan.margin
    limb_component_checks(stump, 0)


def test_short_stump_near_upstream_joint():
    body, spec = two_segment_arm(ring=16, axial=200)
    stump = reconstruct_residual_limb(body, truth(body, spec, 0.98), LIMB, ReconstructionParams(margin=0.002), spec)
    old = stump.mesh.vertices[:stump.new_vertex_range[0]]
    kept = old[stump.part_labels[:stump.new_vertex_range[0]] == 0]
    bone = 0.3
    assert (-kept[:, 2]).max() < 0.05 * bone
    limb_component_checks(stump, 0)


def test_untouched_vertices_are_identical(default_body):
    table = synth_limb_table(default_body)
    spec = table[LimbId.LeftShank]
    j = default_body.skeleton.joints
    stump = reconstruct_residual_limb(default_body, ground_truth_result(j[spec.anchor], j[spec.target], 0.4),
                                      LimbId.LeftShank, None, spec)
    outside = ~np.isin(default_body.part_labels, list(spec.kept_parts | spec.distal_parts))
    n_old = stump.new_vertex_range[0]
    new_outside = ~np.isin(stump.part_labels[:n_old], list(spec.kept_parts | spec.distal_parts))
    assert np.array_equal(default_body.mesh.vertices[outside], stump.mesh.vertices[:n_old][new_outside])
    assert np.array_equal(default_body.part_labels[outside], stump.part_labels[:n_old][new_outside])


def test_errors_carry_stage():
    body, spec = two_segment_arm()
    r = ground_truth_result([0, 0, -5], [0, 0, -4], 0.5, LIMB)
    with pytest.raises(NoBandVertices) as info:
        reconstruct_residual_limb(body, r, LIMB, None, spec)
    assert info.value.stage == "fine_cut"
    with pytest.raises(ValueError):
        reconstruct_residual_limb(body, truth(body, spec, 0.5), LIMB)


@given(st.sampled_from(list(LimbId)), st.floats(0.05, 0.95))
def test_synthetic_body_cuts_stay_closed(default_body, limb, lam):
    table = synth_limb_table(default_body)
    spec = table[limb]
    j = default_body.skeleton.joints
    stump = reconstruct_residual_limb(default_body, ground_truth_result(j[spec.anchor], j[spec.target], lam, limb),
                                      limb, None, spec)
    edited = apply_stump(default_body, stump)
    assert is_watertight(edited.mesh) and is_consistently_oriented(edited.mesh)
    assert set(euler_characteristics(edited.mesh).values()) == {2}
    assert cap_hull_violation(stump) <= 1e-9
    assert not np.isin(edited.part_labels, list(spec.distal_parts)).any()


def test_remove_vertices_is_order_preserving():
    mesh = open_tube(8, 3)
    drop = np.zeros(mesh.n_vertices, bool)
    drop[[3, 10]] = True
    out, keep = remove_vertices(mesh, drop)
    assert np.array_equal(out.vertices, mesh.vertices[keep])
