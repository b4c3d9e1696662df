"""Triangle meshes, a median-split BVH, and segment any-hit queries.

Segment queries are batched: ``segments_hit(bvh, a, b)`` takes ``(n, 3)``
endpoint arrays and walks the tree once with a packet of segment indices,
dropping segments from the packet as soon as they hit something.

Triangles may carry an integer tag. A tagged triangle only blocks segments
carrying the same tag; tag ``-1`` blocks everything. This lets one tree hold
an environment plus a sequence of per-step robot meshes while each query
still sees only ``env + robot[t]``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

DEFAULT_EPS = 1e-4
LEAF_SIZE = 4
_BOX_PAD = 1e-9


class ObjParseError(ValueError):
    pass


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        F = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if np.isnan(V).any():
            raise ValueError("mesh has NaN vertex coordinates")
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", F)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self):
        """``(m, 3, 3)`` array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    def bounds(self):
        if len(self.vertices) == 0:
            return None
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, R, t) -> "TriMesh":
        return TriMesh(self.vertices @ np.asarray(R).T + np.asarray(t), self.triangles)

    @staticmethod
    def concatenate(meshes) -> "TriMesh":
        verts, tris, off = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + off)
            off += len(m.vertices)
        if not verts:
            return TriMesh()
        return TriMesh(np.concatenate(verts), np.concatenate(tris))

    def is_closed(self) -> bool:
        """True when every undirected edge is shared by exactly two triangles."""
        if self.n_triangles == 0:
            return False
        F = self.triangles
        edges = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


# -- primitives --------------------------------------------------------------

def box_mesh(center, size) -> TriMesh:
    c = np.asarray(center, dtype=float)
    h = np.asarray(size, dtype=float) / 2
    signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
    V = c + signs * h
    # vertex index = 4*ix + 2*iy + iz
    F = [
        (0, 1, 3), (0, 3, 2),  # -x
        (4, 6, 7), (4, 7, 5),  # +x
        (0, 4, 5), (0, 5, 1),  # -y
        (2, 3, 7), (2, 7, 6),  # +y
        (0, 2, 6), (0, 6, 4),  # -z
        (1, 5, 7), (1, 7, 3),  # +z
    ]
    return TriMesh(V, F)


def quad_mesh(center, size, axis: int = 2) -> TriMesh:
    """Axis-aligned rectangle of ``size`` (2,) with normal along ``axis``."""
    c = np.asarray(center, dtype=float)
    i, j = [a for a in range(3) if a != axis]
    hx, hy = np.asarray(size, dtype=float) / 2
    V = np.tile(c, (4, 1))
    for k, (sx, sy) in enumerate([(-1, -1), (1, -1), (1, 1), (-1, 1)]):
        V[k, i] += sx * hx
        V[k, j] += sy * hy
    return TriMesh(V, [(0, 1, 2), (0, 2, 3)])


def _frame(axis):
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1), axis


def _ring(center, e1, e2, r, n):
    ang = 2 * np.pi * np.arange(n) / n
    return center + r * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)


def _stitch(rings, n, top_pole: bool, bottom_pole: bool):
    """Triangulate a stack of rings (each ``n`` vertices) with optional caps."""
    F = []
    base = 1 if top_pole else 0
    if top_pole:
        F += [(0, base + (k + 1) % n, base + k) for k in range(n)]
    for r in range(rings - 1):
        a, b = base + r * n, base + (r + 1) * n
        for k in range(n):
            k1 = (k + 1) % n
            F += [(a + k, a + k1, b + k), (a + k1, b + k1, b + k)]
    last = base + (rings - 1) * n
    if bottom_pole:
        p = last + n
        F += [(p, last + k, last + (k + 1) % n) for k in range(n)]
    return F


def cylinder_mesh(center, radius, height, segments: int = 16) -> TriMesh:
    """Closed vertical cylinder (axis +z) centered at ``center``."""
    c = np.asarray(center, dtype=float)
    e1, e2 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    top, bot = c + [0, 0, height / 2], c - [0, 0, height / 2]
    V = np.vstack([top, _ring(top, e1, e2, radius, segments),
                   _ring(bot, e1, e2, radius, segments), bot])
    return TriMesh(V, _stitch(2, segments, True, True))


def capsule_mesh(p0, p1, radius, segments: int = 12, rings: int = 3) -> TriMesh:
    """Closed capsule between ``p0`` and ``p1``; a sphere when they coincide.

    ``segments`` should be a multiple of 4 so the tessellation touches the
    true bounding box on every axis of the local frame.
    """
    if not radius > 0:
        raise ValueError("capsule radius must be positive")
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    if length < 1e-12:
        axis = np.array([0.0, 0.0, 1.0])
    e1, e2, ax = _frame(axis)
    lats = np.pi / 2 * np.arange(1, rings + 1) / rings  # from pole toward equator
    V = [p1 + radius * ax]
    for phi in lats:
        V.append(_ring(p1 + radius * np.cos(phi) * ax, e1, e2, radius * np.sin(phi), segments))
    n_rings = rings
    if length >= 1e-12:
        V.append(_ring(p0, e1, e2, radius, segments))
        n_rings += 1
    for phi in lats[::-1][1:]:
        V.append(_ring(p0 - radius * np.cos(phi) * ax, e1, e2, radius * np.sin(phi), segments))
        n_rings += 1
    V.append(p0 - radius * ax)
    return TriMesh(np.vstack(V), _stitch(n_rings, segments, True, True))


# -- OBJ ---------------------------------------------------------------------

def load_obj(path) -> TriMesh:
    """Read ``v`` and ``f`` records; polygons are fan-triangulated."""
    verts, tris, faces = [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if tok[0] == "v":
                try:
                    xyz = [float(s) for s in tok[1:4]]
                except ValueError:
                    raise ObjParseError(f"{path}:{lineno}: bad vertex record {line!r}") from None
                if len(xyz) != 3 or len(tok) > 5:
                    raise ObjParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                verts.append(xyz)
            elif tok[0] == "f":
                if len(tok) < 4:
                    raise ObjParseError(f"{path}:{lineno}: face needs at least 3 vertices")
                idx = []
                for s in tok[1:]:
                    try:
                        i = int(s.split("/")[0])
                    except ValueError:
                        raise ObjParseError(f"{path}:{lineno}: bad face index {s!r}") from None
                    idx.append(i)
                faces.append((lineno, idx, len(verts)))
            # vn, vt, usemtl, o, g, s, ... are ignored
    n = len(verts)
    for lineno, idx, n_seen in faces:
        resolved = []
        for i in idx:
            j = i - 1 if i > 0 else n_seen + i
            if i == 0 or not 0 <= j < n:
                raise ObjParseError(f"{path}:{lineno}: vertex index {i} out of range (have {n})")
            resolved.append(j)
        tris += [(resolved[0], resolved[k], resolved[k + 1]) for k in range(1, len(resolved) - 1)]
    return TriMesh(np.array(verts, dtype=float).reshape(-1, 3),
                   np.array(tris, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: TriMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v %.9g %.9g %.9g\n" % tuple(v))
        for f in mesh.triangles:
            fh.write("f %d %d %d\n" % tuple(f + 1))


# -- BVH ---------------------------------------------------------------------

@dataclass(frozen=True)
class Bvh:
    """Flattened BVH. Node ``i`` is a leaf iff ``left[i] < 0``; its triangles
    are ``order[start[i]:start[i] + count[i]]``."""

    mesh: TriMesh
    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    tags: np.ndarray
    corners: np.ndarray  # (m, 3, 3), indexed by original triangle id
    tag_lo: np.ndarray = None  # per-node tag range, used to prune tagged subtrees
    tag_hi: np.ndarray = None

    @property
    def n_nodes(self) -> int:
        return len(self.lo)

    def leaves(self):
        """Triangle-index arrays of every leaf."""
        return [self.order[self.start[i]:self.start[i] + self.count[i]]
                for i in range(self.n_nodes) if self.left[i] < 0]


def build_bvh(mesh: TriMesh, tags=None, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Median split on triangle centroids along the widest centroid axis.

    Nodes holding triangles with more than one tag are split by tag first,
    so that per-step subtrees of a tagged tree stay separate.
    """
    corners = mesh.corners()
    m = len(corners)
    tags = np.full(m, -1, dtype=np.int64) if tags is None else np.asarray(tags, dtype=np.int64)
    if len(tags) != m:
        raise ValueError("one tag per triangle required")
    order = np.arange(m)
    lo, hi, left, right, start, count, tlo, thi = [], [], [], [], [], [], [], []
    if m:
        tri_lo, tri_hi = corners.min(axis=1), corners.max(axis=1)
        cent = corners.mean(axis=1)

        def new_node(s, e):
            idx = order[s:e]
            lo.append(tri_lo[idx].min(axis=0))
            hi.append(tri_hi[idx].max(axis=0))
            tlo.append(tags[idx].min())
            thi.append(tags[idx].max())
            left.append(-1)
            right.append(-1)
            start.append(s)
            count.append(e - s)
            return len(lo) - 1

        stack = [(new_node(0, m), 0, m)]
        while stack:
            node, s, e = stack.pop()
            if e - s <= leaf_size:
                continue
            idx = order[s:e]
            if tlo[node] != thi[node]:
                perm = np.argsort(tags[idx], kind="stable")
                tg = tags[idx][perm]
                # split at the tag boundary closest to the median
                bounds = np.flatnonzero(np.diff(tg)) + 1
                mid = s + int(bounds[np.argmin(np.abs(bounds - (e - s) / 2))])
            else:
                c = cent[idx]
                axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
                perm = np.argsort(c[:, axis], kind="stable")
                mid = s + (e - s) // 2
            order[s:e] = idx[perm]
            l_node = new_node(s, mid)
            r_node = new_node(mid, e)
            left[node], right[node] = l_node, r_node
            count[node] = 0
            stack += [(l_node, s, mid), (r_node, mid, e)]
    as_i = lambda a: np.asarray(a, dtype=np.int64)
    return Bvh(mesh=mesh,
               lo=np.asarray(lo, dtype=float).reshape(-1, 3),
               hi=np.asarray(hi, dtype=float).reshape(-1, 3),
               left=as_i(left), right=as_i(right), start=as_i(start), count=as_i(count),
               order=order, tags=tags, corners=corners, tag_lo=as_i(tlo), tag_hi=as_i(thi))


def _dot(x, y):
    return x[:, 0] * y[:, 0] + x[:, 1] * y[:, 1] + x[:, 2] * y[:, 2]


def segment_triangle_hits(a, d, v0, v1, v2, eps):
    """Elementwise both-sided Moller-Trumbore test on ``(p, 3)`` arrays.

    A hit needs barycentrics inside the closed triangle and a segment
    parameter in ``[eps, 1 - eps]``. Zero-length and coplanar segments miss.
    """
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = np.cross(d, e2)
    det = _dot(e1, pvec)
    ok = det != 0
    inv = 1.0 / np.where(ok, det, 1.0)
    s = a - v0
    u = _dot(s, pvec) * inv
    qvec = np.cross(s, e1)
    v = _dot(d, qvec) * inv
    lam = _dot(e2, qvec) * inv
    return ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (lam >= eps) & (lam <= 1 - eps)


def _check_eps(eps):
    if not 0 <= eps < 0.5:
        raise ValueError("eps must lie in [0, 0.5)")


def _as_segments(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    a, b = np.broadcast_arrays(a, b)
    return a.reshape(-1, 3), b.reshape(-1, 3)


def _seg_tags(seg_tags, n):
    if seg_tags is None:
        return np.full(n, -1, dtype=np.int64)
    return np.broadcast_to(np.asarray(seg_tags, dtype=np.int64), (n,))


def segments_hit(bvh: Bvh, a, b, eps: float = DEFAULT_EPS, seg_tags=None) -> np.ndarray:
    """Any-hit test of segments ``a[j] -> b[j]`` against the tree.

    Traversal is breadth-first over (segment, node) pairs, one tree level
    per iteration, so the Python loop runs O(depth) times.
    """
    _check_eps(eps)
    a, b = _as_segments(a, b)
    n = len(a)
    hit = np.zeros(n, dtype=bool)
    if n == 0 or bvh.n_nodes == 0:
        return hit
    stags = _seg_tags(seg_tags, n)
    d = b - a
    zero = d == 0
    with np.errstate(divide="ignore"):
        inv = 1.0 / np.where(zero, 1.0, d)
    pad = _BOX_PAD * (1.0 + np.abs(bvh.lo).max(axis=1) + np.abs(bvh.hi).max(axis=1))
    blo, bhi = bvh.lo - pad[:, None], bvh.hi + pad[:, None]
    tagged = bool((bvh.tag_lo >= 0).any())
    width = int(bvh.count.max())
    leaf_slots = np.arange(width)

    seg = np.arange(n)
    node = np.zeros(n, dtype=np.int64)
    while seg.size:
        if tagged:
            # a subtree whose tags are all >= 0 only blocks segments carrying one of them
            tl, st = bvh.tag_lo[node], stags[seg]
            keep = (tl < 0) | ((st >= tl) & (st <= bvh.tag_hi[node]))
            seg, node = seg[keep], node[keep]
        enter = np.full(seg.size, eps)
        leave = np.full(seg.size, 1.0 - eps)
        for ax in range(3):
            lo, hi, ai = blo[node, ax], bhi[node, ax], a[seg, ax]
            zi = zero[seg, ax]
            t1 = (lo - ai) * inv[seg, ax]
            t2 = (hi - ai) * inv[seg, ax]
            # axis-parallel segments: inside the slab or not at all
            out = zi & ((ai < lo) | (ai > hi))
            enter = np.where(zi, enter, np.maximum(enter, np.minimum(t1, t2)))
            leave = np.where(out, -np.inf, np.where(zi, leave, np.minimum(leave, np.maximum(t1, t2))))
        keep = enter <= leave
        seg, node = seg[keep], node[keep]
        is_leaf = bvh.left[node] < 0
        lseg, lnode = seg[is_leaf], node[is_leaf]
        if lseg.size:
            slot = np.broadcast_to(leaf_slots, (lseg.size, width))
            valid = slot < bvh.count[lnode][:, None]
            ps = np.broadcast_to(lseg[:, None], valid.shape)[valid]
            tri = bvh.order[(bvh.start[lnode][:, None] + slot)[valid]]
            if tagged:
                ttag = bvh.tags[tri]
                ok = (ttag < 0) | (ttag == stags[ps])
                ps, tri = ps[ok], tri[ok]
            c = bvh.corners[tri]
            h = segment_triangle_hits(a[ps], d[ps], c[:, 0], c[:, 1], c[:, 2], eps)
            hit[ps[h]] = True
        inner = ~is_leaf
        inner &= ~hit[seg]
        iseg, inode = seg[inner], node[inner]
        seg = np.concatenate([iseg, iseg])
        node = np.concatenate([bvh.left[inode], bvh.right[inode]])
    return hit


def segments_hit_bruteforce(mesh: TriMesh, a, b, eps: float = DEFAULT_EPS,
                            seg_tags=None, tags=None) -> np.ndarray:
    """Exhaustive oracle with the same contract as :func:`segments_hit`."""
    _check_eps(eps)
    a, b = _as_segments(a, b)
    n = len(a)
    hit = np.zeros(n, dtype=bool)
    corners = mesh.corners()
    ttags = np.full(len(corners), -1, dtype=np.int64) if tags is None else np.asarray(tags)
    stags = _seg_tags(seg_tags, n)
    d = b - a
    for tri, c in enumerate(corners):
        sel = np.arange(n) if ttags[tri] < 0 else np.flatnonzero(stags == ttags[tri])
        if sel.size == 0:
            continue
        hit[sel] |= segment_triangle_hits(a[sel], d[sel], c[0][None], c[1][None], c[2][None], eps)
    return hit


def segment_hits(bvh: Bvh, seg, eps: float = DEFAULT_EPS) -> int:
    """Single-segment form: ``seg`` is ``(a, b)``; returns 0 or 1."""
    a, b = seg
    return int(segments_hit(bvh, a, b, eps)[0])


def segment_hits_bruteforce(mesh: TriMesh, seg, eps: float = DEFAULT_EPS) -> int:
    a, b = seg
    return int(segments_hit_bruteforce(mesh, a, b, eps)[0])


@dataclass(frozen=True)
class Occluders:
    """Environment tree plus an optional tagged tree of per-step robot meshes.

    ``hits(a, b, step)`` treats step ``t`` segments as blocked by
    ``env + robot[t]`` only.
    """

    env: Bvh
    robot: Bvh | None = None
    n_steps: int = 0

    @classmethod
    def build(cls, env_meshes=(), robot_meshes=()) -> "Occluders":
        env = build_bvh(TriMesh.concatenate(list(env_meshes)))
        robot_meshes = list(robot_meshes)
        if not robot_meshes:
            return cls(env, None, 0)
        tags = np.concatenate([np.full(m.n_triangles, t) for t, m in enumerate(robot_meshes)])
        robot = build_bvh(TriMesh.concatenate(robot_meshes), tags=tags)
        return cls(env, robot, len(robot_meshes))

    def hits(self, a, b, step=None, eps: float = DEFAULT_EPS) -> np.ndarray:
        a, b = _as_segments(a, b)
        h = segments_hit(self.env, a, b, eps)
        if self.robot is not None:
            if step is None:
                raise ValueError("step index required when robot meshes are present")
            steps = _seg_tags(step, len(a))
            rest = ~h
            if rest.any():
                h[rest] = segments_hit(self.robot, a[rest], b[rest], eps, seg_tags=steps[rest])
        return h


def env_path(base_dir, p):
    return p if os.path.isabs(p) else os.path.join(base_dir, p)
