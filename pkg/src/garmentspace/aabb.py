"""Bounding-volume hierarchy over triangle meshes: exact closest-point,
k-nearest-face, signed-distance and normal-ray correspondence queries.

Queries are read-only over immutable meshes/trees and safe to run
concurrently. Brute-force counterparts of each query are exposed for tests.
"""
from __future__ import annotations

import heapq
import warnings

import numpy as np

from .mesh import BarycentricPoint, Correspondence, MeshError, TriMesh, face_normals, vertex_normals

_LEAF_SIZE = 8


def closest_point_on_triangles(tri: np.ndarray, p: np.ndarray):
    """Closest points on triangles to query points (Ericson's region test).

    tri: (..., 3, 3) triangle corners; p: (..., 3) queries, broadcastable.
    Returns (closest (..., 3), bary (..., 3)).
    """
    a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    ab, ac, ap = b - a, c - a, p - a

    def dot(x, y):
        return np.sum(x * y, axis=-1)

    d1, d2 = dot(ab, ap), dot(ac, ap)
    bp = p - b
    d3, d4 = dot(ab, bp), dot(ac, bp)
    cp = p - c
    d5, d6 = dot(ab, cp), dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
    v_ab = np.nan_to_num(v_ab, nan=0.0, posinf=0.0, neginf=0.0)
    w_ac = np.nan_to_num(w_ac, nan=0.0, posinf=0.0, neginf=0.0)
    w_bc = np.nan_to_num(w_bc, nan=0.0, posinf=0.0, neginf=0.0)
    v_in = np.nan_to_num(v_in, nan=1 / 3, posinf=0.0, neginf=0.0)
    w_in = np.nan_to_num(w_in, nan=1 / 3, posinf=0.0, neginf=0.0)

    zero = np.zeros_like(d1)
    one = np.ones_like(d1)
    conds = [
        (d1 <= 0) & (d2 <= 0),                      # vertex A
        (d3 >= 0) & (d4 <= d3),                     # vertex B
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),          # edge AB
        (d6 >= 0) & (d5 <= d6),                     # vertex C
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),          # edge AC
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),  # edge BC
    ]
    barys = [
        (one, zero, zero),
        (zero, one, zero),
        (1 - v_ab, v_ab, zero),
        (zero, zero, one),
        (1 - w_ac, zero, w_ac),
        (zero, 1 - w_bc, w_bc),
    ]
    w0 = np.select([c for c in conds], [b[0] for b in barys], default=1 - v_in - w_in)
    w1 = np.select([c for c in conds], [b[1] for b in barys], default=v_in)
    w2 = np.select([c for c in conds], [b[2] for b in barys], default=w_in)
    bary = np.stack([w0, w1, w2], axis=-1)
    closest = bary[..., 0:1] * a + bary[..., 1:2] * b + bary[..., 2:3] * c
    return closest, bary


def _project_simplex(w: np.ndarray) -> np.ndarray:
    """Euclidean projection of rows of w onto the probability simplex."""
    u = np.sort(w, axis=-1)[..., ::-1]
    css = np.cumsum(u, axis=-1) - 1.0
    j = np.arange(1, w.shape[-1] + 1, dtype=np.float64)
    cond = u - css / j > 0
    rho = np.sum(cond, axis=-1)
    lam = -np.take_along_axis(css, rho[..., None] - 1, axis=-1) / rho[..., None]
    return np.maximum(w + lam, 0.0)


def _ray_energy(tri, nrm, p, w):
    """Squared orthogonal distance from p to the interpolated-normal ray at
    barycentric w, plus the signed foot parameter t."""
    q = np.einsum("...i,...ij->...j", w, tri)
    n = np.einsum("...i,...ij->...j", w, nrm)
    nn = np.linalg.norm(n, axis=-1)
    nn = np.maximum(nn, 1e-300)
    u = n / nn[..., None]
    r = p - q
    t = np.sum(r * u, axis=-1)
    perp = r - t[..., None] * u
    e = np.sum(perp * perp, axis=-1)
    return e, t, u, r, nn


def _ray_energy_grad(tri, nrm, p, w):
    e, t, u, r, nn = _ray_energy(tri, nrm, p, w)
    rV = np.einsum("...ij,...j->...i", tri, r)
    uV = np.einsum("...ij,...j->...i", tri, u)
    rN = np.einsum("...ij,...j->...i", nrm, r)
    uN = np.einsum("...ij,...j->...i", nrm, u)
    grad = -2 * rV + 2 * t[..., None] * uV \
        - (2 * t / nn)[..., None] * (rN - t[..., None] * uN)
    return e, t, grad


def minimize_ray_offset(tri, nrm, p, w0, iterations: int = 32):
    """Minimize orthogonal distance to the interpolated-normal ray over the
    barycentric simplex by projected gradient with an adaptive step.

    tri, nrm: (..., 3, 3); p: (..., 3); w0: (..., 3) start weights.
    Returns (w, e, t): weights, squared orthogonal distance, signed foot.
    """
    w = _project_simplex(np.array(w0, dtype=np.float64))
    e, t, grad = _ray_energy_grad(tri, nrm, p, w)
    alpha = np.full(e.shape, 1.0)
    for _ in range(iterations):
        taken = np.zeros(e.shape, dtype=bool)
        # backtracking line search: first improving step of three trial scales
        for scale in (1.0, 0.25, 0.0625):
            cand = _project_simplex(w - (alpha * scale)[..., None] * grad)
            e_c, t_c, g_c = _ray_energy_grad(tri, nrm, p, cand)
            take = ~taken & (e_c < e)
            w = np.where(take[..., None], cand, w)
            t = np.where(take, t_c, t)
            grad = np.where(take[..., None], g_c, grad)
            e = np.where(take, e_c, e)
            alpha = np.where(take, alpha * scale * 2.0, alpha)
            taken |= take
        alpha = np.where(taken, alpha, alpha * 0.0625)
    return w, e, t


class AABBTree:
    """Axis-aligned bounding-box hierarchy over the faces of one mesh.

    Construction is single-threaded; all queries are pure.
    """

    def __init__(self, mesh: TriMesh, leaf_size: int = _LEAF_SIZE):
        if mesh.n_faces == 0:
            raise MeshError("cannot build a tree over an empty mesh")
        self.mesh = mesh
        self.tri = mesh.triangles()
        self.leaf_size = leaf_size
        self._vertex_normals = None
        self._pseudo = None
        self._closed = None
        self._warned_open = False

        n = mesh.n_faces
        self.order = np.arange(n)
        centroids = self.tri.mean(axis=1)
        # node arrays, grown as we split
        self.bmin: list[np.ndarray] = []
        self.bmax: list[np.ndarray] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.start: list[int] = []
        self.count: list[int] = []
        self._build(0, n, centroids)
        self.bmin = np.asarray(self.bmin)
        self.bmax = np.asarray(self.bmax)

    def _build(self, lo, hi, centroids) -> int:
        idx = self.order[lo:hi]
        node = len(self.left)
        self.bmin.append(self.tri[idx].reshape(-1, 3).min(axis=0))
        self.bmax.append(self.tri[idx].reshape(-1, 3).max(axis=0))
        self.left.append(-1)
        self.right.append(-1)
        self.start.append(lo)
        self.count.append(hi - lo)
        if hi - lo > self.leaf_size:
            cents = centroids[idx]
            axis = int(np.argmax(cents.max(axis=0) - cents.min(axis=0)))
            mid = (hi - lo) // 2
            part = np.argpartition(cents[:, axis], mid)
            self.order[lo:hi] = idx[part]
            self.left[node] = self._build(lo, lo + mid, centroids)
            self.right[node] = self._build(lo + mid, hi, centroids)
        return node

    # -- cached derived data ------------------------------------------------

    def vertex_normals(self) -> np.ndarray:
        if self._vertex_normals is None:
            self._vertex_normals = vertex_normals(self.mesh)
        return self._vertex_normals

    def is_closed(self) -> bool:
        if self._closed is None:
            self._closed = self.mesh.is_closed()
        return self._closed

    def _pseudo_normals(self):
        """Angle-weighted vertex pseudo-normals and summed edge normals."""
        if self._pseudo is not None:
            return self._pseudo
        mesh = self.mesh
        fn = face_normals(mesh)
        vstar = np.zeros_like(mesh.vertices)
        edge: dict[tuple[int, int], np.ndarray] = {}
        tri = self.tri
        for f, (i, j, k) in enumerate(mesh.faces):
            pts = tri[f]
            for c, vi in enumerate((i, j, k)):
                e1 = pts[(c + 1) % 3] - pts[c]
                e2 = pts[(c + 2) % 3] - pts[c]
                cosang = np.dot(e1, e2) / max(np.linalg.norm(e1) * np.linalg.norm(e2), 1e-300)
                ang = np.arccos(np.clip(cosang, -1.0, 1.0))
                vstar[vi] += ang * fn[f]
            for a, b in ((i, j), (j, k), (k, i)):
                key = (min(a, b), max(a, b))
                edge[key] = edge.get(key, 0.0) + fn[f]
        self._pseudo = (fn, vstar, edge)
        return self._pseudo

    # -- traversals ----------------------------------------------------------

    def _box_dist2(self, node, p):
        d = np.maximum(self.bmin[node] - p, 0) + np.maximum(p - self.bmax[node], 0)
        return float(np.dot(d, d))

    def closest_point(self, p):
        """Exact closest point on the mesh.

        Returns (distance, face_index, point (3,), bary (3,)).
        """
        p = np.asarray(p, dtype=np.float64)
        best = (np.inf, -1, None, None)
        heap = [(self._box_dist2(0, p), 0)]
        while heap:
            d2, node = heapq.heappop(heap)
            if d2 >= best[0] * best[0]:
                break
            if self.left[node] < 0:
                lo, cnt = self.start[node], self.count[node]
                faces = self.order[lo:lo + cnt]
                cp, bary = closest_point_on_triangles(self.tri[faces], p)
                dists = np.linalg.norm(cp - p, axis=-1)
                i = int(np.argmin(dists))
                if dists[i] < best[0]:
                    best = (float(dists[i]), int(faces[i]), cp[i], bary[i])
            else:
                for child in (self.left[node], self.right[node]):
                    cd = self._box_dist2(child, p)
                    if cd < best[0] * best[0]:
                        heapq.heappush(heap, (cd, child))
        return best

    def k_nearest_faces(self, p, k: int):
        """The k faces nearest to p by exact closest-point distance.

        Returns (faces (k,), dists (k,), bary (k, 3)) sorted by distance.
        """
        p = np.asarray(p, dtype=np.float64)
        k = min(k, self.mesh.n_faces)
        best: list = []  # max-heap of the k best as (-dist, face, bary)
        heap = [(self._box_dist2(0, p), 0)]
        while heap:
            d2, node = heapq.heappop(heap)
            if len(best) == k and d2 >= (-best[0][0]) ** 2:
                continue
            if self.left[node] < 0:
                lo, cnt = self.start[node], self.count[node]
                faces = self.order[lo:lo + cnt]
                cp, bary = closest_point_on_triangles(self.tri[faces], p)
                dists = np.linalg.norm(cp - p, axis=-1)
                for i in range(len(faces)):
                    if len(best) < k:
                        heapq.heappush(best, (-dists[i], int(faces[i]), bary[i]))
                    elif dists[i] < -best[0][0]:
                        heapq.heapreplace(best, (-dists[i], int(faces[i]), bary[i]))
            else:
                for child in (self.left[node], self.right[node]):
                    cd = self._box_dist2(child, p)
                    if len(best) < k or cd < (-best[0][0]) ** 2:
                        heapq.heappush(heap, (cd, child))
        out = sorted(((-d, f, b) for d, f, b in best), key=lambda t: (t[0], t[1]))
        faces = np.asarray([f for _, f, _ in out])
        dists = np.asarray([d for d, _, _ in out])
        bary = np.asarray([b for _, _, b in out])
        return faces, dists, bary


def signed_distance(p, body: TriMesh, tree: AABBTree) -> float:
    """Signed distance to a closed, consistently oriented mesh: magnitude is
    the distance to the nearest face, the sign comes from the angle-weighted
    pseudo-normal at the closest point (negative inside)."""
    if not tree.is_closed() and not tree._warned_open:
        warnings.warn("signed_distance on an open mesh: sign is unreliable")
        tree._warned_open = True
    dist, face, point, bary = tree.closest_point(p)
    n = _pseudo_normal_at(tree, face, bary)
    s = 1.0 if np.dot(np.asarray(p, dtype=np.float64) - point, n) >= 0 else -1.0
    return s * dist


def _pseudo_normal_at(tree: AABBTree, face: int, bary) -> np.ndarray:
    fn, vstar, edge = tree._pseudo_normals()
    idx = tree.mesh.faces[face]
    zero = bary < 1e-9
    nz = int(zero.sum())
    if nz == 0:
        return fn[face]
    if nz >= 2:
        return vstar[idx[int(np.argmax(bary))]]
    a, b = idx[~zero]
    return edge[(min(a, b), max(a, b))]


def closest_signed_batch(points: np.ndarray, body: TriMesh, tree: AABBTree):
    """Signed distance, closest surface point and unit pseudo-normal for many
    queries. All faces are scanned in chunks, which beats per-point traversal
    for many queries on small bodies.

    Returns (sd (Q,), closest (Q, 3), normal (Q, 3)).
    """
    points = np.asarray(points, dtype=np.float64)
    dist, face, bary, cpnt = brute_closest_points(points, body)
    tree._pseudo_normals()
    sd = np.empty(len(points))
    nrm = np.empty((len(points), 3))
    for i in range(len(points)):
        n = _pseudo_normal_at(tree, int(face[i]), bary[i])
        n = n / max(np.linalg.norm(n), 1e-300)
        s = 1.0 if np.dot(points[i] - cpnt[i], n) >= 0 else -1.0
        sd[i] = s * dist[i]
        nrm[i] = n
    return sd, cpnt, nrm


def signed_distance_batch(points: np.ndarray, body: TriMesh, tree: AABBTree) -> np.ndarray:
    """Vectorized signed distances (see closest_signed_batch)."""
    return closest_signed_batch(points, body, tree)[0]


def brute_closest_points(points: np.ndarray, mesh: TriMesh, chunk: int = 128):
    """Closest point over every face for each query (oracle + batch backend).

    Returns (dist (Q,), face (Q,), bary (Q, 3), point (Q, 3)).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.triangles()
    Q = len(points)
    dist = np.empty(Q)
    face = np.empty(Q, dtype=np.int64)
    bary = np.empty((Q, 3))
    cpnt = np.empty((Q, 3))
    for s in range(0, Q, chunk):
        pc = points[s:s + chunk]
        cp, bw = closest_point_on_triangles(tri[None, :, :, :], pc[:, None, :])
        d = np.linalg.norm(cp - pc[:, None, :], axis=-1)
        best = np.argmin(d, axis=1)
        rows = np.arange(len(pc))
        dist[s:s + chunk] = d[rows, best]
        face[s:s + chunk] = best
        bary[s:s + chunk] = bw[rows, best]
        cpnt[s:s + chunk] = cp[rows, best]
    return dist, face, bary, cpnt


_RAY_TIE_WINDOW = 1e-5  # meters; must exceed the minimizer's convergence noise


def _pick_best_ray(faces, w, e, t):
    """Deterministic winner among candidate faces.

    Residuals within the tie window of the minimum count as equal; ties
    prefer the smaller |normal distance|, then the smaller face index. The
    window matters because several exact rays can explain one query (any
    exterior point lies on some ray of each spherical cap, and on the
    backward-extended ray of an antipodal point of any closed body); the
    near anchor must win regardless of which ray the minimizer converged to
    more tightly.
    """
    r = np.sqrt(np.maximum(e, 0.0))
    tied = r <= r.min() + _RAY_TIE_WINDOW
    cf, cw, ce, ct = faces[tied], w[tied], e[tied], t[tied]
    order = np.lexsort((cf, np.abs(ct)))
    i = order[0]
    return int(cf[i]), cw[i], float(ce[i]), float(ct[i])


def nearest_ray_correspondence(query, body: TriMesh, tree: AABBTree, k: int = 16) -> Correspondence:
    """Best normal-ray explanation of a query point near the body surface.

    Among the k faces nearest by closest-point distance, finds the barycentric
    anchor minimizing the orthogonal distance from the query to the ray cast
    along the interpolated unit vertex normal.
    """
    if body.n_faces == 0:
        raise MeshError("empty mesh")
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query, dtype=np.float64)
    faces, _, bary0 = tree.k_nearest_faces(query, k)
    vn = tree.vertex_normals()
    tri = tree.tri[faces]
    nrm = vn[body.faces[faces]]
    w, e, t = minimize_ray_offset(tri, nrm, query[None, :], bary0)
    f, wbest, ebest, tbest = _pick_best_ray(faces, w, e, t)
    return _make_correspondence(query, body, vn, f, wbest, tbest)


def _make_correspondence(query, body, vn, face, w, t) -> Correspondence:
    anchor = BarycentricPoint(face, np.clip(w, 0.0, 1.0) / np.clip(w, 0.0, 1.0).sum())
    p = anchor.point(body)
    n = anchor.interpolate(vn, body.faces)
    n = n / np.linalg.norm(n)
    foot = p + t * n
    residual = float(np.linalg.norm(query - foot))
    return Correspondence(anchor, float(t), residual)


def exhaustive_ray_correspondence(query, body: TriMesh, normals: np.ndarray | None = None) -> Correspondence:
    """Oracle: the same per-face ray minimization run over every face."""
    if body.n_faces == 0:
        raise MeshError("empty mesh")
    query = np.asarray(query, dtype=np.float64)
    vn = vertex_normals(body) if normals is None else normals
    _, _, bary_all = _all_face_starts(query, body)
    tri = body.triangles()
    nrm = vn[body.faces]
    w, e, t = minimize_ray_offset(tri, nrm, query[None, :], bary_all)
    faces = np.arange(body.n_faces)
    f, wbest, ebest, tbest = _pick_best_ray(faces, w, e, t)
    return _make_correspondence(query, body, vn, f, wbest, tbest)


def _all_face_starts(query, body):
    tri = body.triangles()
    cp, bary = closest_point_on_triangles(tri, query)
    d = np.linalg.norm(cp - query, axis=-1)
    return d, cp, bary


def ray_correspondences_batch(points: np.ndarray, body: TriMesh, tree: AABBTree,
                              k: int = 16):
    """Vectorized nearest_ray_correspondence over many queries.

    Candidate faces are the k nearest by closest-point distance (exact, via a
    full chunked scan); the per-face minimization is identical to the
    single-query path. Returns arrays (faces (Q,), weights (Q, 3),
    distances (Q,), residuals (Q,)).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if body.n_faces == 0:
        raise MeshError("empty mesh")
    k = min(k, body.n_faces)
    vn = tree.vertex_normals()
    tri = body.triangles()
    nrm_all = vn[body.faces]
    Q = len(points)
    out_face = np.empty(Q, dtype=np.int64)
    out_w = np.empty((Q, 3))
    out_t = np.empty(Q)
    out_res = np.empty(Q)
    chunk = max(1, int(4e6 // max(body.n_faces, 1)))
    for s in range(0, Q, chunk):
        pc = points[s:s + chunk]
        cp, bw = closest_point_on_triangles(tri[None, :, :, :], pc[:, None, :])
        d = np.linalg.norm(cp - pc[:, None, :], axis=-1)
        cand = np.argpartition(d, k - 1, axis=1)[:, :k]
        rows = np.arange(len(pc))[:, None]
        w, e, t = minimize_ray_offset(tri[cand], nrm_all[cand], pc[:, None, :], bw[rows, cand])
        # winner per row: smallest energy, face index breaking ties
        for i in range(len(pc)):
            f, wb, eb, tb = _pick_best_ray(cand[i], w[i], e[i], t[i])
            c = _make_correspondence(pc[i], body, vn, f, wb, tb)
            out_face[s + i] = f
            out_w[s + i] = c.anchor.weights
            out_t[s + i] = c.normal_distance
            out_res[s + i] = c.residual
    return out_face, out_w, out_t, out_res
