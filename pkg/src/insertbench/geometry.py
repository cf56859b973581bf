"""Poses, frame transforms, planar cross-sections, and task/board descriptions.

Units are SI internally. Orientation is intrinsic Z-Y-X:
R = Rz(theta_z) @ Ry(theta_y) @ Rx(theta_x).

Simulation poses are expressed in the frame of the target socket: origin at
the hole center on the board surface, z pointing up out of the board.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import Polygon

from .errors import FormatError

MM = 1e-3
DEG = math.pi / 180.0


def _wrap_scalar(a: float) -> float:
    out = math.pi - math.fmod(math.pi - a, 2 * math.pi)
    if out > math.pi:
        out -= 2 * math.pi
    elif out <= -math.pi:
        out += 2 * math.pi
    return out


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    if isinstance(a, (float, int)):
        return _wrap_scalar(float(a))
    out = math.pi - np.mod(math.pi - np.asarray(a, dtype=float), 2 * math.pi)
    out = np.where(out <= -math.pi, out + 2 * math.pi, out)
    return float(out) if out.ndim == 0 else out


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def rot2(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


def euler_from_matrix(r: np.ndarray) -> tuple[float, float, float]:
    """Return (theta_x, theta_y, theta_z) for R = Rz Ry Rx."""
    ty = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    tz = math.atan2(r[1, 0], r[0, 0])
    tx = math.atan2(r[2, 1], r[2, 2])
    return tx, ty, tz


@dataclass(frozen=True)
class Pose6:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    theta_x: float = 0.0
    theta_y: float = 0.0
    theta_z: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.theta_x, self.theta_y, self.theta_z)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite pose {vals}")
        put = object.__setattr__
        put(self, "x", float(self.x))
        put(self, "y", float(self.y))
        put(self, "z", float(self.z))
        put(self, "theta_x", _wrap_scalar(float(self.theta_x)))
        put(self, "theta_y", _wrap_scalar(float(self.theta_y)))
        put(self, "theta_z", _wrap_scalar(float(self.theta_z)))

    @classmethod
    def from_array(cls, a) -> "Pose6":
        return cls(*[float(v) for v in a])

    @classmethod
    def from_matrix(cls, r: np.ndarray, t) -> "Pose6":
        tx, ty, tz = euler_from_matrix(r)
        return cls(t[0], t[1], t[2], tx, ty, tz)

    @classmethod
    def from_mm_deg(cls, x=0.0, y=0.0, z=0.0, theta_x=0.0, theta_y=0.0, theta_z=0.0) -> "Pose6":
        return cls(x * MM, y * MM, z * MM, theta_x * DEG, theta_y * DEG, theta_z * DEG)

    def to_mm_deg(self) -> list[float]:
        return [self.x / MM, self.y / MM, self.z / MM,
                self.theta_x / DEG, self.theta_y / DEG, self.theta_z / DEG]

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.theta_x, self.theta_y, self.theta_z])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def angles(self) -> np.ndarray:
        return np.array([self.theta_x, self.theta_y, self.theta_z])

    def rotation(self) -> np.ndarray:
        r = self.__dict__.get("_rot")
        if r is None:
            cx, sx = math.cos(self.theta_x), math.sin(self.theta_x)
            cy, sy = math.cos(self.theta_y), math.sin(self.theta_y)
            cz, sz = math.cos(self.theta_z), math.sin(self.theta_z)
            r = np.array([
                [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
                [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
                [-sy, cy * sx, cy * cx],
            ])
            r.setflags(write=False)
            object.__setattr__(self, "_rot", r)
        return r

    def quaternion(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) of the orientation, w >= 0."""
        cx, sx = math.cos(self.theta_x / 2), math.sin(self.theta_x / 2)
        cy, sy = math.cos(self.theta_y / 2), math.sin(self.theta_y / 2)
        cz, sz = math.cos(self.theta_z / 2), math.sin(self.theta_z / 2)
        q = np.array([
            cz * cy * cx + sz * sy * sx,
            cz * cy * sx - sz * sy * cx,
            cz * sy * cx + sz * cy * sx,
            sz * cy * cx - cz * sy * sx,
        ])
        return q if q[0] >= 0 else -q

    def compose(self, other: "Pose6") -> "Pose6":
        """self (+) other: ``other`` expressed in the frame of ``self``."""
        r = self.rotation()
        return Pose6.from_matrix(r @ other.rotation(), r @ other.position + self.position)

    def inverse(self) -> "Pose6":
        r = self.rotation()
        return Pose6.from_matrix(r.T, -r.T @ self.position)

    def relative_to(self, frame: "Pose6") -> "Pose6":
        return frame.inverse().compose(self)


def transform_to_eef(world_point, eef_pose: Pose6) -> np.ndarray:
    return eef_pose.rotation().T @ (np.asarray(world_point, float) - eef_pose.position)


def transform_to_world(eef_point, eef_pose: Pose6) -> np.ndarray:
    return eef_pose.rotation() @ np.asarray(eef_point, float) + eef_pose.position


# -- corrective actions ---------------------------------------------------------


def corrective_label(goal: Pose6, pose: Pose6) -> np.ndarray:
    """Correction (dx, dy, dtheta_x, dtheta_y, dtheta_z) taking ``pose`` to ``goal``.

    Translation is expressed in the heading frame of ``pose`` (rotated by its
    theta_z); angle terms are wrapped component differences.
    """
    d = rot2(-pose.theta_z) @ np.array([goal.x - pose.x, goal.y - pose.y])
    da = wrap_angle(goal.angles - pose.angles)
    return np.array([d[0], d[1], da[0], da[1], da[2]])


def apply_correction(pose: Pose6, action, dz: float = 0.0) -> Pose6:
    """Inverse of :func:`corrective_label`; ``dz`` is a separate vertical move."""
    a = np.asarray(action, float)
    d = rot2(pose.theta_z) @ a[:2]
    return Pose6(
        pose.x + d[0], pose.y + d[1], pose.z + dz,
        pose.theta_x + a[2], pose.theta_y + a[3], pose.theta_z + a[4],
    )


# -- polygons -------------------------------------------------------------------


def signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(v: np.ndarray) -> np.ndarray:
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6 * a)


def _edges(v):
    return v, np.roll(v, -1, axis=0)


def segments_cross(a0, a1, b0, b1) -> np.ndarray:
    """Pairwise proper-or-touching intersection of segment sets (n,2) x (m,2)."""
    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    A0, A1 = a0[:, None, :], a1[:, None, :]
    B0, B1 = b0[None, :, :], b1[None, :, :]
    d1 = orient(B0, B1, A0)
    d2 = orient(B0, B1, A1)
    d3 = orient(A0, A1, B0)
    d4 = orient(A0, A1, B1)
    boxes = (
        (np.minimum(A0[..., 0], A1[..., 0]) <= np.maximum(B0[..., 0], B1[..., 0]))
        & (np.minimum(B0[..., 0], B1[..., 0]) <= np.maximum(A0[..., 0], A1[..., 0]))
        & (np.minimum(A0[..., 1], A1[..., 1]) <= np.maximum(B0[..., 1], B1[..., 1]))
        & (np.minimum(B0[..., 1], B1[..., 1]) <= np.maximum(A0[..., 1], A1[..., 1]))
    )
    return (d1 * d2 <= 0) & (d3 * d4 <= 0) & boxes


def is_simple(v: np.ndarray) -> bool:
    n = len(v)
    if n < 3:
        return False
    a0, a1 = _edges(v)
    hit = segments_cross(a0, a1, a0, a1)
    idx = np.arange(n)
    adjacent = (np.abs(idx[:, None] - idx[None, :]) <= 1) | (np.abs(idx[:, None] - idx[None, :]) == n - 1)
    return not np.any(hit & ~adjacent)


def points_in_polygon(px, py, v: np.ndarray) -> np.ndarray:
    """Even-odd rule, vectorized over points."""
    px = np.asarray(px, float)
    py = np.asarray(py, float)
    inside = np.zeros(np.broadcast(px, py).shape, bool)
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for i in range(len(v)):
        cond = (y0[i] > py) != (y1[i] > py)
        xint = x0[i] + (py - y0[i]) * (x1[i] - x0[i]) / (y1[i] - y0[i] if y1[i] != y0[i] else 1.0)
        inside ^= cond & (px < xint)
    return inside


def _point_segment_dist(p, s0, s1):
    """Distances from points (n,2) to segments (m,2) -> (n,m)."""
    d = s1 - s0
    dd = np.einsum("ij,ij->i", d, d)
    w = p[:, None, :] - s0[None, :, :]
    t = np.clip(np.einsum("nmj,mj->nm", w, d) / np.where(dd > 0, dd, 1.0), 0.0, 1.0)
    proj = s0[None] + t[..., None] * d[None]
    return np.linalg.norm(p[:, None, :] - proj, axis=-1)


def boundary_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum distance between two polygon boundaries (0 if they touch or cross)."""
    a0, a1 = _edges(a)
    b0, b1 = _edges(b)
    if np.any(segments_cross(a0, a1, b0, b1)):
        return 0.0
    return float(min(_point_segment_dist(a, b0, b1).min(), _point_segment_dist(b, a0, a1).min()))


def polygon_strictly_inside(inner: np.ndarray, outer: np.ndarray, margin: float = 0.0) -> bool:
    """True iff ``inner`` lies inside ``outer`` with boundary gap strictly > margin."""
    if not np.all(points_in_polygon(inner[:, 0], inner[:, 1], outer)):
        return False
    return boundary_distance(inner, outer) > margin


def offset_polygon(v: np.ndarray, d: float) -> np.ndarray:
    """Mitre offset of a CCW simple polygon (outward for d > 0)."""
    n = len(v)
    e = np.roll(v, -1, axis=0) - v
    normals = np.stack([e[:, 1], -e[:, 0]], axis=1) / np.linalg.norm(e, axis=1)[:, None]
    p = v + d * normals
    out = np.empty_like(v)
    for i in range(n):
        j = i - 1
        # intersect offset line of edge j with offset line of edge i
        p1, d1 = p[j], e[j]
        p2, d2 = p[i], e[i]
        den = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(den) < 1e-18:
            out[i] = p2
            continue
        t = ((p2[0] - p1[0]) * d2[1] - (p2[1] - p1[1]) * d2[0]) / den
        out[i] = p1 + t * d1
    return out


@dataclass(frozen=True, eq=False)
class CrossSection:
    vertices: np.ndarray
    kind: str = "convex"

    def __post_init__(self):
        v = np.asarray(self.vertices, float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise FormatError("cross-section needs >= 3 two-dimensional vertices")
        if signed_area(v) < 0:
            v = v[::-1].copy()
        if abs(signed_area(v)) <= 0:
            raise FormatError("zero-area cross-section")
        if not is_simple(v):
            raise FormatError("self-intersecting cross-section")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        if self.kind not in ("convex", "nonconvex"):
            raise FormatError(f"unknown cross-section kind {self.kind!r}")

    def __eq__(self, other):
        return isinstance(other, CrossSection) and self.kind == other.kind and np.array_equal(
            self.vertices, other.vertices
        )

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    @property
    def centroid(self) -> np.ndarray:
        return polygon_centroid(self.vertices)

    def placed(self, offset, theta_z: float) -> np.ndarray:
        return self.vertices @ rot2(theta_z).T + np.asarray(offset, float)

    def offset(self, d: float) -> "CrossSection":
        return CrossSection(offset_polygon(self.vertices, d), self.kind)


def square(side: float) -> CrossSection:
    h = side / 2
    return CrossSection(np.array([[-h, -h], [h, -h], [h, h], [-h, h]]))


def rectangle(w: float, h: float) -> CrossSection:
    return CrossSection(np.array([[-w / 2, -h / 2], [w / 2, -h / 2], [w / 2, h / 2], [-w / 2, h / 2]]))


def regular_polygon(n: int, circumradius: float, phase: float = math.pi / 2) -> CrossSection:
    a = phase + 2 * math.pi * np.arange(n) / n
    return CrossSection(circumradius * np.stack([np.cos(a), np.sin(a)], axis=1))


def circle(radius: float, n: int = 32) -> CrossSection:
    return regular_polygon(n, radius, phase=0.0)


def triangle(side: float) -> CrossSection:
    """Equilateral triangle with centroid at the origin, apex along +y."""
    return regular_polygon(3, side / math.sqrt(3))


def plug(width: float) -> CrossSection:
    """Non-convex, x-symmetric plug outline: a body with a keyed notch on top."""
    w = width / 2
    h = 0.35 * width
    nw, nd = 0.2 * width, 0.25 * width
    v = np.array([
        [-w, -h], [w, -h], [w, h], [nw, h], [nw, h - nd], [-nw, h - nd], [-nw, h], [-w, h],
    ])
    v[:, 1] -= polygon_centroid(v)[1]
    return CrossSection(v, "nonconvex")


SHAPES = {"square": square, "circle": circle, "triangle": triangle, "plug": plug}


# -- tasks and boards -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TaskSpec:
    """One insertion (or threading) task in its socket frame.

    For insertion the gripped peg must end up inside the fixed hole. For
    threading the gripped part is a hoop whose opening ``peg`` must end up
    around the fixed shaft ``hole``; containment roles swap.
    """

    peg: CrossSection
    hole: CrossSection
    clearance: float
    goal_pose: Pose6
    peg_color: tuple = (0.1, 0.1, 0.1)
    socket_color: tuple = (0.9, 0.9, 0.85)
    board_color: tuple = (0.35, 0.55, 0.75)
    mode: str = "insertion"
    friction_mu: float = 0.3
    task_id: str = "task"
    peg_height: float = 3 * MM
    hoop_width: float = 4 * MM

    def __post_init__(self):
        if self.mode not in ("insertion", "threading"):
            raise FormatError(f"unknown task mode {self.mode!r}")
        if not self.clearance > 0:
            raise FormatError("clearance must be positive")
        if self.peg_height < 0 or self.friction_mu < 0:
            raise FormatError("peg_height and friction_mu must be non-negative")
        for c in (self.peg_color, self.socket_color, self.board_color):
            if len(c) != 3 or not all(0.0 <= x <= 1.0 for x in c):
                raise FormatError(f"color {c} outside [0,1]^3")
        inner, outer = self.containment_pair(np.zeros(2), 0.0)
        gap = boundary_distance(inner, outer)
        inside = np.all(points_in_polygon(inner[:, 0], inner[:, 1], outer))
        if not inside or abs(gap - self.clearance) > 1e-3 * self.clearance + 1e-9:
            raise FormatError(
                f"{self.task_id}: aligned gap {gap:.3e} m does not match clearance {self.clearance:.3e} m"
            )

    @property
    def depth(self) -> float:
        return -self.goal_pose.z

    def containment_pair(self, offset, theta_z: float) -> tuple[np.ndarray, np.ndarray]:
        """(inner, outer) vertex arrays with the gripped part placed at offset/theta_z."""
        moving = self.peg.placed(offset, theta_z)
        if self.mode == "insertion":
            return moving, self.hole.vertices
        return self.hole.vertices, moving

    @cached_property
    def _hole_shape(self) -> Polygon:
        return Polygon(self.hole.vertices)

    @cached_property
    def _peg_shape(self) -> Polygon:
        return Polygon(self.peg.vertices)


def contains_with_clearance(task: TaskSpec, lateral_offset, theta_z: float, margin: float = 0.0) -> bool:
    """Strict containment of the gripped part at the given lateral pose.

    ``margin`` is an extra required gap (used for the tilt reduction).
    Boundary contact counts as not contained.
    """
    return _contains(task, float(lateral_offset[0]), float(lateral_offset[1]), float(theta_z), float(margin))


def contact_patch(task: TaskSpec, lateral_offset, theta_z: float, margin: float = 0.0, contained=None):
    """Area and centroid of the part of the tip resting on the surface.

    Insertion: peg minus hole. Threading: shaft top minus hoop opening.
    ``margin`` erodes the opening (tilt reduction). The centroid is returned
    relative to the gripped part's axis, in its heading frame; it is (0, 0)
    when the area is zero. ``contained`` may pass a precomputed
    :func:`contains_with_clearance` result for the same arguments.
    """
    x, y, th, mg = float(lateral_offset[0]), float(lateral_offset[1]), float(theta_z), float(margin)
    if contained is None:
        contained = _contains(task, x, y, th, mg)
    if contained:
        return 0.0, np.zeros(2)
    area, cx, cy = _patch(task, x, y, th, mg)
    return area, np.array([cx, cy])


# Both are pure in their (hashable) arguments; a settled robot repeats the same
# query every tick, so a small cache removes most of the polygon work.
@lru_cache(maxsize=4096)
def _contains(task: TaskSpec, x: float, y: float, theta_z: float, margin: float) -> bool:
    inner, outer = task.containment_pair((x, y), theta_z)
    return polygon_strictly_inside(inner, outer, margin)


@lru_cache(maxsize=64)
def _eroded(shape: Polygon, margin: float) -> Polygon:
    return shape.buffer(-margin, join_style="mitre")


@lru_cache(maxsize=4096)
def _patch(task: TaskSpec, x: float, y: float, theta_z: float, margin: float):
    moving = Polygon(task.peg.placed((x, y), theta_z))
    if task.mode == "insertion":
        solid = moving
        opening = _eroded(task._hole_shape, margin) if margin > 0 else task._hole_shape
    else:
        solid = task._hole_shape
        opening = moving.buffer(-margin, join_style="mitre") if margin > 0 else moving
    patch = solid.difference(opening) if not opening.is_empty else solid
    area = float(patch.area)
    if area <= 0.0:
        return 0.0, 0.0, 0.0
    c = np.array(patch.centroid.coords[0]) - (x, y)
    cx, cy = rot2(-theta_z) @ c
    return area, float(cx), float(cy)


@dataclass
class Socket:
    task: TaskSpec
    offset: Pose6 = field(default_factory=Pose6)
    occupied: bool = False


@dataclass
class BoardLayout:
    """Rigid board carrying one or more sockets; offsets are from the board center."""

    board_pose: Pose6 = field(default_factory=Pose6)
    sockets: list = field(default_factory=list)
    size: tuple = (0.10, 0.08)
    table_color: tuple = (0.92, 0.92, 0.92)

    def __post_init__(self):
        for i in range(len(self.sockets)):
            for j in range(i + 1, len(self.sockets)):
                if self._footprints_overlap(self.sockets[i], self.sockets[j]):
                    raise FormatError(f"sockets {i} and {j} overlap")

    @staticmethod
    def _footprint(s: Socket) -> Polygon:
        verts = s.task.hole.vertices
        if s.task.mode == "threading":
            verts = s.task.peg.offset(s.task.hoop_width).vertices
        return Polygon(verts @ rot2(s.offset.theta_z).T + [s.offset.x, s.offset.y])

    def _footprints_overlap(self, a: Socket, b: Socket) -> bool:
        return self._footprint(a).intersects(self._footprint(b))

    def socket_world_pose(self, i: int) -> Pose6:
        return self.board_pose.compose(self.sockets[i].offset)

    def goal_world_pose(self, i: int) -> Pose6:
        return self.socket_world_pose(i).compose(self.sockets[i].task.goal_pose)

    def with_pose(self, pose: Pose6) -> "BoardLayout":
        return replace(self, board_pose=pose, sockets=[replace(s) for s in self.sockets])


def single_socket_board(task: TaskSpec, pose: Pose6 | None = None) -> BoardLayout:
    return BoardLayout(pose or Pose6(), [Socket(task)])


def make_task(
    shape: str,
    size: float,
    clearance: float,
    task_id: str | None = None,
    mode: str = "insertion",
    depth: float = 5 * MM,
    **kwargs,
) -> TaskSpec:
    """Build a task from a named shape; the opening is the part offset by ``clearance``."""
    if shape not in SHAPES:
        raise FormatError(f"unknown shape {shape!r}; expected one of {sorted(SHAPES)}")
    body = SHAPES[shape](size)
    if mode == "insertion":
        peg, hole = body, body.offset(clearance)
    else:
        # hoop opening around a shaft of the named shape
        peg, hole = body.offset(clearance), body
    return TaskSpec(
        peg=peg,
        hole=hole,
        clearance=clearance,
        goal_pose=Pose6(0, 0, -depth),
        mode=mode,
        task_id=task_id or f"{shape}_{clearance / MM:g}mm",
        **kwargs,
    )


def standard_tasks() -> dict[str, TaskSpec]:
    """Desk-scale suite: four cross-sections x two clearances, plus two threading tasks."""
    palette = {
        "square": (0.1, 0.1, 0.1),
        "circle": (0.75, 0.2, 0.15),
        "triangle": (0.2, 0.6, 0.25),
        "plug": (0.15, 0.15, 0.2),
    }
    sizes = {"square": 20 * MM, "circle": 10 * MM, "triangle": 22 * MM, "plug": 20 * MM}
    tasks = {}
    for shape in ("square", "circle", "triangle", "plug"):
        for clr in (0.3 * MM, 1.0 * MM):
            t = make_task(shape, sizes[shape], clr, peg_color=palette[shape])
            tasks[t.task_id] = t
    for shape, mu in (("square", 0.3), ("triangle", 0.5)):
        t = make_task(
            shape, sizes[shape], 1.0 * MM, task_id=f"thread_{shape}_1mm", mode="threading",
            peg_color=(0.8, 0.6, 0.3), socket_color=(0.55, 0.35, 0.2), friction_mu=mu,
        )
        tasks[t.task_id] = t
    return tasks


# -- JSON documents (mm / deg on disk) -----------------------------------------------


def _color(v, default):
    return tuple(float(c) for c in v) if v is not None else default


def task_from_dict(d: dict) -> TaskSpec:
    """Parse a task object. Either ``shape`` + ``size_mm`` or explicit vertex lists."""
    try:
        extra = {}
        for key, default in (("peg_color", None), ("socket_color", None), ("board_color", None)):
            if key in d:
                extra[key] = _color(d[key], default)
        if "friction_mu" in d:
            extra["friction_mu"] = float(d["friction_mu"])
        if "peg_height_mm" in d:
            extra["peg_height"] = float(d["peg_height_mm"]) * MM
        mode = d.get("mode", "insertion")
        if "shape" in d:
            return make_task(
                d["shape"], float(d["size_mm"]) * MM, float(d["clearance_mm"]) * MM,
                task_id=d.get("task_id"), mode=mode, depth=float(d.get("depth_mm", 5.0)) * MM, **extra,
            )
        peg = CrossSection(np.asarray(d["peg_vertices_mm"], float) * MM, d.get("peg_kind", "convex"))
        hole = CrossSection(np.asarray(d["hole_vertices_mm"], float) * MM, d.get("hole_kind", "convex"))
        goal = Pose6.from_mm_deg(*d.get("goal_pose", [0, 0, -float(d.get("depth_mm", 5.0))]))
        return TaskSpec(
            peg, hole, float(d["clearance_mm"]) * MM, goal, mode=mode,
            task_id=d.get("task_id", "task"), **extra,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad task description: {exc}") from exc


def task_to_dict(t: TaskSpec) -> dict:
    return {
        "task_id": t.task_id,
        "mode": t.mode,
        "peg_vertices_mm": (t.peg.vertices / MM).tolist(),
        "peg_kind": t.peg.kind,
        "hole_vertices_mm": (t.hole.vertices / MM).tolist(),
        "hole_kind": t.hole.kind,
        "clearance_mm": t.clearance / MM,
        "goal_pose": t.goal_pose.to_mm_deg(),
        "peg_color": list(t.peg_color),
        "socket_color": list(t.socket_color),
        "board_color": list(t.board_color),
        "friction_mu": t.friction_mu,
        "peg_height_mm": t.peg_height / MM,
    }


def resolve_task(d) -> TaskSpec:
    """A task reference: a name from the standard suite or an inline object."""
    if isinstance(d, str):
        suite = standard_tasks()
        if d not in suite:
            raise FormatError(f"unknown task {d!r}")
        return suite[d]
    return task_from_dict(d)


def board_from_dict(d: dict) -> BoardLayout:
    try:
        sockets = [
            Socket(resolve_task(s["task"]), Pose6.from_mm_deg(*s.get("offset", [])), bool(s.get("occupied", False)))
            for s in d.get("sockets", [])
        ]
        size = tuple(float(v) * MM for v in d.get("size_mm", (100, 80)))
        return BoardLayout(Pose6.from_mm_deg(*d.get("board_pose", [])), sockets, size)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad board description: {exc}") from exc


def board_to_dict(b: BoardLayout) -> dict:
    return {
        "board_pose": b.board_pose.to_mm_deg(),
        "size_mm": [v / MM for v in b.size],
        "sockets": [
            {"task": task_to_dict(s.task), "offset": s.offset.to_mm_deg(), "occupied": s.occupied}
            for s in b.sockets
        ],
    }


def load_task(path) -> TaskSpec:
    try:
        return task_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(str(exc)) from exc


def load_board(path) -> BoardLayout:
    try:
        return board_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(str(exc)) from exc
