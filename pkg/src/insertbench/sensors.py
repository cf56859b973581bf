"""Synthetic wrist camera and wrench sensor.

Images are float32 arrays of shape (H, W, C) with values in [0, 1]. Each pixel
center casts an orthographic ray along the camera's optical axis; the ray is
intersected with the board plane (and with the peg tip plane for the gripped
part) and the hit point is classified by point-in-polygon tests. No
anti-aliasing, so renders are bit-exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import OutOfPlane
from .geometry import DEG, MM, BoardLayout, Pose6, TaskSpec, points_in_polygon, rot2, single_socket_board
from .sim import RobotState, WrenchReading

CONTACT_BAND = 2 * MM


@dataclass(frozen=True)
class CameraModel:
    """Orthographic camera rigidly attached to the EEF.

    ``tilt`` is the angle between the optical axis and the EEF's downward
    axis: 45 deg for the wrist camera looking at the fingertips, 0 for the
    localization camera looking straight down.
    """

    tilt: float = 45 * DEG
    focus_offset: Pose6 = field(default_factory=Pose6)
    resolution: tuple = (64, 64, 3)
    scale: float = 0.5 * MM
    supersample: int = 1

    def __post_init__(self):
        if self.scale <= 0 or self.supersample < 1:
            raise ValueError("scale must be positive and supersample >= 1")
        if len(self.resolution) != 3 or self.resolution[2] != 3:
            raise ValueError("resolution must be (H, W, 3)")

    def axes(self):
        t = self.tilt
        u = np.array([1.0, 0.0, 0.0])
        w = np.array([0.0, math.cos(t), math.sin(t)])
        v = np.array([0.0, math.sin(t), -math.cos(t)])
        return u, w, v

    def pixel_origins(self) -> np.ndarray:
        """Ray origins (N, 3) in the EEF frame, row-major, supersamples last."""
        h, w, _ = self.resolution
        k = self.supersample
        sub = (np.arange(k) + 0.5) / k
        cols = (np.arange(w)[:, None] + sub[None, :]).ravel() - w / 2
        rows = h / 2 - (np.arange(h)[:, None] + sub[None, :]).ravel()
        uu = cols * self.scale
        ww = rows * self.scale
        ax_u, ax_w, _ = self.axes()
        grid = ww[:, None, None] * ax_w + uu[None, :, None] * ax_u
        # reorder (h*k, w*k) -> (h, w, k*k) so supersamples of a pixel are contiguous
        grid = grid.reshape(h, k, w, k, 3).transpose(0, 2, 1, 3, 4).reshape(-1, 3)
        return grid + self.focus_offset.position


WRIST_CAMERA = CameraModel()
LOCALIZER_CAMERA = CameraModel(tilt=0.0, resolution=(128, 128, 3), scale=1.0 * MM, supersample=4)


def _plane_hits(origins: np.ndarray, direction: np.ndarray, frame: Pose6) -> np.ndarray:
    """Intersect rays given in ``frame`` coordinates with the z=0 plane of the parent."""
    r = frame.rotation()
    o = origins @ r.T + frame.position
    d = r @ direction
    if abs(d[2]) < 1e-9:
        raise OutOfPlane("optical axis parallel to the board")
    s = -o[:, 2] / d[2]
    return o[:, :2] + s[:, None] * d[:2]


def _planar(p: Pose6):
    return np.array([p.x, p.y]), p.theta_z


def _place(verts, pose2):
    t, a = pose2
    return verts @ rot2(a).T + t


def _compose2(a, b):
    ta, aa = a
    tb, ab = b
    return ta + rot2(aa) @ tb, aa + ab


def _inverse2(a):
    t, ang = a
    return -rot2(-ang) @ t, -ang


def board_layers(board: BoardLayout, frame2) -> list:
    """Static scene as (vertices, color, hole_vertices|None) layers in ``frame2``.

    ``frame2`` maps board-local planar coordinates into the output frame.
    """
    layers = []
    bw, bh = board.size
    rect = np.array([[-bw / 2, -bh / 2], [bw / 2, -bh / 2], [bw / 2, bh / 2], [-bw / 2, bh / 2]])
    color0 = board.sockets[0].task.board_color if board.sockets else (0.35, 0.55, 0.75)
    layers.append((_place(rect, frame2), color0, None))
    for s in board.sockets:
        pose2 = _compose2(frame2, _planar(s.offset))
        t = s.task
        if t.mode == "insertion":
            layers.append((_place(t.hole.vertices, pose2), t.socket_color, None))
            if s.occupied:
                layers.append((_place(t.peg.vertices, pose2), t.peg_color, None))
        else:
            if s.occupied:
                ring = t.peg.offset(t.hoop_width).vertices
                layers.append((_place(ring, pose2), t.peg_color, _place(t.peg.vertices, pose2)))
            layers.append((_place(t.hole.vertices, pose2), t.socket_color, None))
    return layers


def _paint(img_flat, pts, layers):
    for verts, color, hole in layers:
        mask = points_in_polygon(pts[:, 0], pts[:, 1], verts)
        if hole is not None:
            mask &= ~points_in_polygon(pts[:, 0], pts[:, 1], hole)
        img_flat[mask] = color


def _finish(camera: CameraModel, flat: np.ndarray) -> np.ndarray:
    h, w, c = camera.resolution
    k2 = camera.supersample**2
    img = flat.reshape(h, w, k2, c)
    img = img[:, :, 0] if k2 == 1 else img.mean(axis=2)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def render_tilted(
    camera: CameraModel,
    board: BoardLayout | None,
    task: TaskSpec,
    state: RobotState,
    socket: int = 0,
) -> np.ndarray:
    """Wrist-camera image at the moment the tip touches the surface.

    ``state`` is expressed in the frame of ``board.sockets[socket]``; the
    board's world pose is not used, so the image depends only on the
    EEF-relative scene.
    """
    peg = state.peg_pose
    if abs(peg.z) >= CONTACT_BAND:
        raise OutOfPlane(f"tip {peg.z / MM:.2f} mm from the surface; capture only at contact")
    if board is None:
        board = single_socket_board(task)
    frame2 = _inverse2(_planar(board.sockets[socket].offset)) if board.sockets else (np.zeros(2), 0.0)
    origins = camera.pixel_origins()
    _, _, view = camera.axes()
    n = len(origins)
    flat = np.empty((n, 3))
    flat[:] = board.table_color
    pts = _plane_hits(origins, view, state.eef_pose)
    _paint(flat, pts, board_layers(board, frame2))
    # gripped part on top, hit on its own tip plane
    g = state.grasp_offset
    rg = g.rotation()
    o_peg = (origins - g.position) @ rg
    d_peg = rg.T @ view
    s = -o_peg[:, 2] / d_peg[2]
    ppts = o_peg[:, :2] + s[:, None] * d_peg[:2]
    if task.mode == "insertion":
        mask = points_in_polygon(ppts[:, 0], ppts[:, 1], task.peg.vertices)
    else:
        ring = task.peg.offset(task.hoop_width).vertices
        mask = points_in_polygon(ppts[:, 0], ppts[:, 1], ring)
        mask &= ~points_in_polygon(ppts[:, 0], ppts[:, 1], task.peg.vertices)
    flat[mask] = task.peg_color
    return _finish(camera, flat)


def render_overhead(camera: CameraModel, board: BoardLayout, eef_world: Pose6) -> np.ndarray:
    """Localization-camera image of the board in world coordinates."""
    origins = camera.pixel_origins()
    _, _, view = camera.axes()
    flat = np.empty((len(origins), 3))
    flat[:] = board.table_color
    pts = _plane_hits(origins, view, eef_world)
    _paint(flat, pts, board_layers(board, _planar(board.board_pose)))
    return _finish(camera, flat)


def read_wrench(true_wrench: WrenchReading, noise_std=(0.0, 0.0), rng: np.random.Generator | None = None) -> WrenchReading:
    """Add zero-mean Gaussian noise (force std, moment std) per component."""
    sf, sm = noise_std
    if sf < 0 or sm < 0:
        raise ValueError("noise std must be non-negative")
    if sf == 0 and sm == 0:
        return true_wrench
    noise = rng.standard_normal(6) * np.repeat([sf, sm], 3)
    return WrenchReading.from_array(true_wrench.as_array() + noise)


def check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or not np.all((img >= 0) & (img <= 1)):
        raise ValueError("image must be (H, W, C) with values in [0, 1]")


def write_ppm(path, img: np.ndarray) -> None:
    """Binary P6 dump, 8-bit, values round(v * 255)."""
    check_image(img)
    h, w, _ = img.shape
    data = np.round(np.asarray(img, np.float64) * 255).astype(np.uint8)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + data.tobytes())
