"""Residual-limb mesh editing: prune, cut, clean the rim, seal a stump cap.

Vertex removal always compacts in order, so geometry outside the edited limb
keeps its relative order; sealing appends new vertices and faces at the end.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull

from .core import ArticulatedBody, LimbId, LimbSpec, TriangleMesh, as_vec3
from .errors import (
    DegenerateLoop,
    DegenerateSegment,
    LoopCollapsed,
    MultipleBoundaryComponents,
    NoBandVertices,
    NonManifoldBoundary,
    RejectedRafoResult,
    ResiLimbError,
    SelfIntersectingSeal,
    UnknownPartId,
)

DEFAULT_SHRINK = 0.5

# Part names (kept segment, pruned distal parts) for bodies that use the
# synthetic naming scheme.  Real inputs carry their own table in the body file.
LIMB_PARTS = {
    LimbId.LeftUpperArm: ("left_upper_arm", ("left_forearm", "left_hand")),
    LimbId.LeftForearm: ("left_forearm", ("left_hand",)),
    LimbId.RightUpperArm: ("right_upper_arm", ("right_forearm", "right_hand")),
    LimbId.RightForearm: ("right_forearm", ("right_hand",)),
    LimbId.LeftThigh: ("left_thigh", ("left_lower_leg", "left_foot")),
    LimbId.LeftShank: ("left_lower_leg", ("left_foot",)),
    LimbId.RightThigh: ("right_thigh", ("right_lower_leg", "right_foot")),
    LimbId.RightShank: ("right_lower_leg", ("right_foot",)),
}


@dataclass(frozen=True, eq=False)
class CutPlan:
    cut_point: np.ndarray
    normal: np.ndarray
    margin: float
    limb_part_ids: frozenset
    distal_part_ids: frozenset

    def __post_init__(self):
        n = as_vec3(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("cut normal must be unit length")
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        kept, distal = frozenset(self.limb_part_ids), frozenset(self.distal_part_ids)
        if kept & distal:
            raise ValueError("kept and distal part sets overlap")
        object.__setattr__(self, "cut_point", as_vec3(self.cut_point))
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "limb_part_ids", kept)
        object.__setattr__(self, "distal_part_ids", distal)

    def signed_distance(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.cut_point) @ self.normal


@dataclass(frozen=True)
class BoundaryLoop:
    vertex_indices: tuple
    is_closed: bool = True

    def __len__(self):
        return len(self.vertex_indices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vertex_indices, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class SealedStump:
    mesh: TriangleMesh
    new_vertex_range: tuple
    new_face_range: tuple
    ring_offset_h: float
    shrink: float = DEFAULT_SHRINK
    part_labels: np.ndarray | None = None
    boundary: BoundaryLoop | None = None
    plane: tuple | None = None


@dataclass(frozen=True)
class ReconstructionParams:
    margin: float | None = None
    h: float | None = None
    shrink: float = DEFAULT_SHRINK


class PruneResult(NamedTuple):
    mesh: TriangleMesh
    kept_vertex_mask: np.ndarray


class CutResult(NamedTuple):
    mesh: TriangleMesh
    raw_boundary: BoundaryLoop
    kept_vertex_mask: np.ndarray


class SpikeResult(NamedTuple):
    mesh: TriangleMesh
    loop: BoundaryLoop
    kept_vertex_mask: np.ndarray
    iterations: int


# ---------------------------------------------------------------------------
# mesh helpers


def _directed_edges(faces) -> np.ndarray:
    return np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])


def _edge_keys(edges, n) -> np.ndarray:
    # one int64 per vertex pair; far faster to unique than rows
    return edges[:, 0] * n + edges[:, 1]


def edge_multiplicity(faces) -> tuple[np.ndarray, np.ndarray]:
    """Unique undirected edges ``(k, 2)`` and how many faces use each."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if not len(faces):
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    e = np.sort(_directed_edges(faces), axis=1)
    n = int(faces.max()) + 1
    keys, counts = np.unique(_edge_keys(e, n), return_counts=True)
    return np.column_stack([keys // n, keys % n]), counts


def vertex_degree(mesh: TriangleMesh) -> np.ndarray:
    edges, _ = edge_multiplicity(mesh.faces)
    return np.bincount(edges.ravel(), minlength=mesh.n_vertices)


def vertex_neighbors(n_vertices: int, faces) -> list[list[int]]:
    edges, _ = edge_multiplicity(faces)
    nbrs = [[] for _ in range(n_vertices)]
    for a, b in edges.tolist():
        nbrs[a].append(b)
        nbrs[b].append(a)
    return nbrs


def remove_vertices(mesh: TriangleMesh, remove_mask) -> tuple[TriangleMesh, np.ndarray]:
    """Drop flagged vertices and every face touching them; order-preserving."""
    remove = np.asarray(remove_mask, dtype=bool)
    keep = ~remove
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    faces = mesh.faces
    face_keep = keep[faces].all(axis=1) if len(faces) else np.zeros(0, dtype=bool)
    return TriangleMesh(mesh.vertices[keep], remap[faces[face_keep]]), keep


def median_edge_length(mesh: TriangleMesh, face_mask=None) -> float:
    faces = mesh.faces if face_mask is None else mesh.faces[np.asarray(face_mask, dtype=bool)]
    edges, _ = edge_multiplicity(faces)
    if not len(edges):
        raise ValueError("no edges")
    return float(np.median(np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)))


def is_watertight(mesh: TriangleMesh, face_mask=None) -> bool:
    faces = mesh.faces if face_mask is None else mesh.faces[np.asarray(face_mask, dtype=bool)]
    _, counts = edge_multiplicity(faces)
    return bool(len(counts)) and bool(np.all(counts == 2))


def is_consistently_oriented(mesh: TriangleMesh, face_mask=None) -> bool:
    """No directed edge is used by two faces."""
    faces = mesh.faces if face_mask is None else mesh.faces[np.asarray(face_mask, dtype=bool)]
    keys = _edge_keys(_directed_edges(faces), mesh.n_vertices)
    return len(np.unique(keys)) == len(keys)


def face_components(mesh: TriangleMesh) -> np.ndarray:
    """Connected-component label per vertex (edge connectivity)."""
    n = mesh.n_vertices
    edges, _ = edge_multiplicity(mesh.faces)
    graph = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    return connected_components(graph, directed=False)[1]


def euler_characteristics(mesh: TriangleMesh) -> dict[int, int]:
    """V - E + F for every connected component that has faces."""
    labels = face_components(mesh)
    edges, _ = edge_multiplicity(mesh.faces)
    out = {}
    for comp in np.unique(labels[mesh.faces[:, 0]]) if mesh.n_faces else []:
        v = int(np.sum(labels == comp))
        e = int(np.sum(labels[edges[:, 0]] == comp))
        f = int(np.sum(labels[mesh.faces[:, 0]] == comp))
        out[int(comp)] = v - e + f
    return out


# ---------------------------------------------------------------------------
# planning


def limb_spec_from_names(body: ArticulatedBody, limb: LimbId, anchor: int, target: int) -> LimbSpec:
    kept, distal = LIMB_PARTS[limb]
    try:
        return LimbSpec(anchor, target, int(limb), {body.part_id(kept)}, {body.part_id(n) for n in distal})
    except KeyError as exc:
        raise UnknownPartId(f"body has no part named {exc.args[0]!r}") from None


def compute_cut_plan(rafo, target_init, body: ArticulatedBody, limb_id, limb_spec: LimbSpec | None = None,
                     margin: float | None = None) -> CutPlan:
    """Cut point ``J_a* + lam* (J_t - J_a*)`` with normal ``(J_a* - J_t)/|...|``.

    The normal points toward the anchor, i.e. toward the geometry removed.
    Without ``margin`` the band half-width is twice the median edge length
    of the kept limb segment.
    """
    if not rafo.accepted:
        raise RejectedRafoResult("RAFO result was not accepted")
    limb = LimbId.parse(limb_id)
    anchor = as_vec3(rafo.anchor_opt)
    target = as_vec3(target_init)
    axis = anchor - target
    length = np.linalg.norm(axis)
    if length < 1e-6:
        raise DegenerateSegment(f"anchor and target {length:.3g} m apart")
    lam = float(rafo.lambda_opt)
    cut_point = anchor + lam * (target - anchor)
    if limb_spec is None:
        limb_spec = limb_spec_from_names(body, limb, -1, -1)
    unknown = (limb_spec.kept_parts | limb_spec.distal_parts) - set(body.part_names)
    if unknown:
        raise UnknownPartId(f"unknown part ids {sorted(unknown)}")
    normal = axis / length
    if margin is None:
        region = body.part_mask(limb_spec.kept_parts)
        face_mask = region[body.mesh.faces].all(axis=1)
        margin = 2.0 * median_edge_length(body.mesh, face_mask)
        # a band wider than the segment's extent past the cut would swallow
        # the whole tip and leave nothing to remove
        reach = float(((body.mesh.vertices[region] - cut_point) @ normal).max(initial=0.0))
        if reach > 0:
            margin = min(margin, 0.5 * reach)
    return CutPlan(cut_point, normal, float(margin), limb_spec.kept_parts, limb_spec.distal_parts)


# ---------------------------------------------------------------------------
# pruning and cutting


def coarse_prune(body: ArticulatedBody, plan: CutPlan) -> PruneResult:
    unknown = (plan.distal_part_ids | plan.limb_part_ids) - set(body.part_names)
    if unknown:
        raise UnknownPartId(f"unknown part ids {sorted(unknown)}")
    if not plan.distal_part_ids:
        return PruneResult(body.mesh, np.ones(body.mesh.n_vertices, dtype=bool))
    mesh, keep = remove_vertices(body.mesh, body.part_mask(plan.distal_part_ids))
    return PruneResult(mesh, keep)


def _boundary_edge_set(faces) -> set:
    edges, counts = edge_multiplicity(faces)
    return {tuple(e) for e in edges[counts == 1].tolist()}


def fine_cut(mesh: TriangleMesh, plan: CutPlan, kept_region_mask) -> CutResult:
    """Remove limb vertices beyond the cut band and return the new rim.

    The protective ring is the set of band vertices (``|phi| < margin``)
    reachable from the face nearest the cut point.
    """
    region = np.asarray(kept_region_mask, dtype=bool)
    verts = mesh.vertices
    phi = plan.signed_distance(verts)
    band = region & (np.abs(phi) < plan.margin)
    if not band.any() and not ((phi[region] > plan.margin).any() and (phi[region] < -plan.margin).any()):
        # an empty band is fine while the plane still splits the segment
        # (a coarse grid can straddle it); otherwise the cut misses the limb
        raise NoBandVertices("no limb vertex lies within the cut band")

    faces = mesh.faces
    region_faces = faces[region[faces].all(axis=1)]
    nbrs = vertex_neighbors(mesh.n_vertices, region_faces)
    seeds = []
    if len(region_faces):
        centroids = verts[region_faces].mean(axis=1)
        nearest = region_faces[np.argmin(np.linalg.norm(centroids - plan.cut_point, axis=1))]
        seeds = [int(v) for v in nearest if band[v]]
    if not seeds and band.any():
        band_idx = np.flatnonzero(band)
        seeds = [int(band_idx[np.argmin(np.linalg.norm(verts[band_idx] - plan.cut_point, axis=1))])]
    ring = np.zeros(mesh.n_vertices, dtype=bool)
    ring[seeds] = True
    queue = deque(seeds)
    while queue:
        v = queue.popleft()
        for w in nbrs[v]:
            if band[w] and not ring[w]:
                ring[w] = True
                queue.append(w)

    remove = region & (phi > plan.margin) & ~ring
    before = _boundary_edge_set(faces)
    cut_mesh, keep = remove_vertices(mesh, remove)
    old_index = np.flatnonzero(keep)

    loops = [l for l in extract_boundary_loops(cut_mesh)
             if any(tuple(sorted((old_index[a], old_index[b]))) not in before
                    for a, b in zip(l.vertex_indices, l.vertex_indices[1:] + l.vertex_indices[:1]))]
    if not loops:
        raise NoBandVertices("cut plane does not separate the limb")
    main = loops[0]
    if len(loops) > 1 and len(loops[1]) >= 0.5 * len(main):
        raise MultipleBoundaryComponents(len(loops))

    # sliver islands: tiny loops on components detached from the main rim
    small = [l for l in loops[1:] if len(l) < 0.1 * len(main)]
    if small:
        comp = face_components(cut_mesh)
        main_comp = comp[main.vertex_indices[0]]
        drop = np.zeros(cut_mesh.n_vertices, dtype=bool)
        for l in small:
            c = comp[l.vertex_indices[0]]
            if c != main_comp:
                drop |= comp == c
        if drop.any():
            cut_mesh, keep2 = remove_vertices(cut_mesh, drop)
            remap = np.cumsum(keep2) - 1
            main = BoundaryLoop(tuple(int(remap[v]) for v in main.vertex_indices), main.is_closed)
            full_keep = keep.copy()
            full_keep[old_index[~keep2]] = False
            keep = full_keep
    return CutResult(cut_mesh, main, keep)


def extract_boundary_loops(mesh: TriangleMesh) -> list[BoundaryLoop]:
    """All loops of edges used by exactly one face, longest first.

    Each loop is ordered so that the face owning edge ``(l[i], l[i+1])``
    traverses it in that direction.
    """
    faces = mesh.faces
    if not len(faces):
        return []
    directed = _directed_edges(faces)
    und = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(_edge_keys(und, mesh.n_vertices), return_inverse=True, return_counts=True)
    is_b = counts[inverse.reshape(-1)] == 1
    bdir = directed[is_b]
    if not len(bdir):
        return []
    incident = np.bincount(bdir.ravel(), minlength=mesh.n_vertices)
    bad = np.flatnonzero(incident > 2)
    if bad.size:
        raise NonManifoldBoundary(bad.tolist())

    adj: dict[int, list[int]] = {}
    owned = set()
    for a, b in bdir.tolist():
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
        owned.add((a, b))
    seen = set()
    loops = []
    for start in sorted(adj):
        if start in seen:
            continue
        order = [start]
        seen.add(start)
        prev, cur = None, start
        closed = False
        while True:
            nxt = [w for w in adj[cur] if w != prev]
            if not nxt:
                break
            w = nxt[0]
            if w == start:
                closed = True
                break
            if w in seen:
                break
            order.append(w)
            seen.add(w)
            prev, cur = cur, w
        if len(order) > 1 and (order[0], order[1]) not in owned:
            order = [order[0]] + order[1:][::-1]
        loops.append(BoundaryLoop(tuple(order), closed))
    loops.sort(key=lambda l: (-len(l), min(l.vertex_indices)))
    return loops


def _best_matching_loop(loops, reference: set):
    if not loops:
        return None
    return max(loops, key=lambda l: (len(reference.intersection(l.vertex_indices)), len(l)))


def prune_boundary_spikes(mesh: TriangleMesh, loop: BoundaryLoop) -> SpikeResult:
    """Strip rim vertices of degree <= 2 until none remain."""
    keep_total = np.ones(mesh.n_vertices, dtype=bool)
    orig_index = np.arange(mesh.n_vertices)
    iterations = 0
    while True:
        deg = vertex_degree(mesh)
        spikes = [v for v in loop.vertex_indices if deg[v] <= 2]
        if not spikes:
            break
        remove = np.zeros(mesh.n_vertices, dtype=bool)
        remove[spikes] = True
        ref = set(loop.vertex_indices) - set(spikes)
        mesh, keep = remove_vertices(mesh, remove)
        remap = np.cumsum(keep) - 1
        keep_total[orig_index[remove]] = False
        orig_index = orig_index[keep]
        iterations += 1
        loop = _best_matching_loop(extract_boundary_loops(mesh), {int(remap[v]) for v in ref})
        if loop is None or len(loop) < 3:
            raise LoopCollapsed("spike pruning left fewer than 3 rim vertices")
    return SpikeResult(mesh, loop, keep_total, iterations)


# ---------------------------------------------------------------------------
# sealing


def fit_boundary_plane(loop_vertices, reference_normal=None) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares plane (centroid, unit normal) through the rim."""
    pts = np.asarray(loop_vertices, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateLoop("need at least 3 points")
    centroid = pts.mean(axis=0)
    cov = (pts - centroid).T @ (pts - centroid) / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] - evals[0] <= 1e-12:
        raise DegenerateLoop("rim points are collinear")
    normal = evecs[:, 0] / np.linalg.norm(evecs[:, 0])
    if reference_normal is not None and normal @ as_vec3(reference_normal) < 0:
        normal = -normal
    return centroid, normal


def _orient_loop(mesh: TriangleMesh, loop: BoundaryLoop) -> np.ndarray:
    idx = loop.as_array()
    f = mesh.faces
    a, b = idx[0], idx[1]
    forward = np.any(((f[:, 0] == a) & (f[:, 1] == b)) | ((f[:, 1] == a) & (f[:, 2] == b)) | ((f[:, 2] == a) & (f[:, 0] == b)))
    return idx if forward else np.concatenate([idx[:1], idx[1:][::-1]])


def _segment_hits(p0, p1, a, b, c, eps=1e-12):
    d = p1 - p0
    e1 = b - a
    e2 = c - a
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = p0 - a
    u = inv * np.einsum("ij,ij->i", s, h)
    q = np.cross(s, e1)
    v = inv * np.einsum("ij,ij->i", d, q)
    t = inv * np.einsum("ij,ij->i", e2, q)
    tol = 1e-9
    return ok & (u > tol) & (v > tol) & (u + v < 1 - tol) & (t > tol) & (t < 1 - tol)


def triangle_pairs_intersecting(verts, tris_a, tris_b) -> list[tuple[int, int]]:
    """Index pairs (i, j) where triangle ``tris_a[i]`` crosses ``tris_b[j]``.

    Pairs sharing a vertex are skipped; touching contacts do not count.
    """
    if not len(tris_a) or not len(tris_b):
        return []
    pa, pb = verts[tris_a], verts[tris_b]
    lo_a, hi_a = pa.min(axis=1), pa.max(axis=1)
    lo_b, hi_b = pb.min(axis=1), pb.max(axis=1)
    overlap = np.all((lo_a[:, None] <= hi_b[None]) & (lo_b[None] <= hi_a[:, None]), axis=2)
    ia, ib = np.nonzero(overlap)
    shared = (tris_a[ia][:, :, None] == tris_b[ib][:, None, :]).any(axis=(1, 2))
    ia, ib = ia[~shared], ib[~shared]
    if not len(ia):
        return []
    hit = np.zeros(len(ia), dtype=bool)
    A, B = pa[ia], pb[ib]
    for k in range(3):
        hit |= _segment_hits(A[:, k], A[:, (k + 1) % 3], B[:, 0], B[:, 1], B[:, 2])
        hit |= _segment_hits(B[:, k], B[:, (k + 1) % 3], A[:, 0], A[:, 1], A[:, 2])
    return sorted(zip(ia[hit].tolist(), ib[hit].tolist()))


def seal_stump(mesh: TriangleMesh, loop: BoundaryLoop, plane, h: float, shrink: float = DEFAULT_SHRINK,
               check_faces=None) -> SealedStump:
    """Close ``loop`` with two shrinking rings and an apex on the distal side.

    Ring ``k`` (k = 1, 2) is the rim shrunk toward the centroid by
    ``shrink**k`` and lifted ``k * h`` along the normal; the apex sits at
    ``3 h``.  New faces wind opposite to the rim's owning faces, so the
    result keeps the input's orientation.  ``check_faces`` limits which
    existing faces are tested for intersection with the cap.
    """
    if len(loop) < 3 or not loop.is_closed:
        raise ValueError("sealing needs a closed loop with at least 3 vertices")
    if not h > 0:
        raise ValueError("h must be positive")
    if not 0 < shrink < 1:
        raise ValueError("shrink must lie in (0, 1)")
    centroid, normal = as_vec3(plane[0]), as_vec3(plane[1])
    normal = normal / np.linalg.norm(normal)
    rim = _orient_loop(mesh, loop)
    n = len(rim)
    base = mesh.n_vertices
    rim_pts = mesh.vertices[rim]
    ring1 = centroid + shrink * (rim_pts - centroid) + h * normal
    ring2 = centroid + shrink**2 * (rim_pts - centroid) + 2 * h * normal
    apex = centroid + 3 * h * normal
    new_verts = np.vstack([ring1, ring2, apex[None]])

    r1 = base + np.arange(n)
    r2 = base + n + np.arange(n)
    top = base + 2 * n
    i = np.arange(n)
    j = (i + 1) % n
    new_faces = []
    for outer, inner in ((rim, r1), (r1, r2)):
        new_faces.append(np.column_stack([outer[j], outer[i], inner[i]]))
        new_faces.append(np.column_stack([outer[j], inner[i], inner[j]]))
    new_faces.append(np.column_stack([r2[j], r2[i], np.full(n, top)]))
    new_faces = np.vstack(new_faces)

    all_verts = np.vstack([mesh.vertices, new_verts])
    kept = mesh.faces if check_faces is None else mesh.faces[np.asarray(check_faces, dtype=bool)]
    pairs = triangle_pairs_intersecting(all_verts, new_faces, kept)
    if pairs:
        raise SelfIntersectingSeal(mesh, pairs)

    sealed = TriangleMesh(all_verts, np.vstack([mesh.faces, new_faces]))
    return SealedStump(
        mesh=sealed,
        new_vertex_range=(base, sealed.n_vertices),
        new_face_range=(mesh.n_faces, sealed.n_faces),
        ring_offset_h=float(h),
        shrink=float(shrink),
        boundary=BoundaryLoop(tuple(int(v) for v in rim)),
        plane=(centroid, normal),
    )


def cap_hull_violation(stump: SealedStump) -> float:
    """Largest distance by which an added vertex lies outside hull(rim + apex)."""
    verts = stump.mesh.vertices
    start, stop = stump.new_vertex_range
    apex = verts[stop - 1]
    hull_pts = np.vstack([verts[list(stump.boundary.vertex_indices)], apex[None]])
    hull = ConvexHull(hull_pts)
    dist = verts[start:stop] @ hull.equations[:, :3].T + hull.equations[:, 3]
    return float(dist.max())


def default_ring_offset(loop_points, centroid) -> float:
    return 0.25 * float(np.mean(np.linalg.norm(np.asarray(loop_points) - centroid, axis=1)))


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ResiLimbError as exc:
        exc.stage = name
        raise


def reconstruct_residual_limb(body: ArticulatedBody, rafo, limb_id, params: ReconstructionParams | None = None,
                              limb_spec: LimbSpec | None = None) -> SealedStump:
    """Full edit for one limb: prune, cut, de-spike, fit plane, seal.

    ``limb_spec`` supplies the target joint and the part ids; it is
    required because part tables are body-specific.
    """
    params = params or ReconstructionParams()
    limb = LimbId.parse(limb_id)
    if limb_spec is None:
        raise ValueError("limb_spec is required")
    target_init = body.skeleton.joints[limb_spec.target]
    plan = _stage("plan", compute_cut_plan, rafo, target_init, body, limb, limb_spec, params.margin)

    pruned, keep1 = _stage("coarse_prune", coarse_prune, body, plan)
    labels = body.part_labels[keep1]
    region = np.isin(labels, list(plan.limb_part_ids))
    cut = _stage("fine_cut", fine_cut, pruned, plan, region)
    labels = labels[cut.kept_vertex_mask]
    spiked = _stage("prune_spikes", prune_boundary_spikes, cut.mesh, cut.raw_boundary)
    labels = labels[spiked.kept_vertex_mask]
    mesh, loop = spiked.mesh, spiked.loop

    rim_pts = mesh.vertices[loop.as_array()]
    centroid, normal = _stage("fit_plane", fit_boundary_plane, rim_pts, plan.normal)
    h = params.h if params.h is not None else default_ring_offset(rim_pts, centroid)
    region = np.isin(labels, list(plan.limb_part_ids))
    check = region[mesh.faces].all(axis=1)
    stump = _stage("seal", seal_stump, mesh, loop, (centroid, normal), h, params.shrink, check)

    kept_label = min(plan.limb_part_ids)
    n_new = stump.new_vertex_range[1] - stump.new_vertex_range[0]
    new_labels = np.concatenate([labels, np.full(n_new, kept_label, dtype=np.int64)])
    return SealedStump(
        mesh=stump.mesh,
        new_vertex_range=stump.new_vertex_range,
        new_face_range=stump.new_face_range,
        ring_offset_h=stump.ring_offset_h,
        shrink=stump.shrink,
        part_labels=new_labels,
        boundary=stump.boundary,
        plane=stump.plane,
    )


def apply_stump(body: ArticulatedBody, stump: SealedStump) -> ArticulatedBody:
    """Body with its mesh replaced by the sealed result (skeleton unchanged)."""
    return ArticulatedBody(stump.mesh, body.skeleton, stump.part_labels, body.part_names)


def default_limb_table(body: ArticulatedBody, anchors: Mapping[LimbId, tuple[int, int]]) -> dict[LimbId, LimbSpec]:
    return {limb: limb_spec_from_names(body, limb, a, t) for limb, (a, t) in anchors.items()}
