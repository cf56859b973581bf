"""Rough board localization by closed-loop image alignment.

A reference image of the board is taken once from a known EEF pose together
with the EEF-to-hole transforms. Later the board may have moved; the EEF
returns to the reference pose and repeatedly (1) renders the overhead view,
(2) searches a planar motion (dx, dy, dtheta_z) of the EEF whose predicted
image best matches the reference by normalized cross-correlation, and (3)
moves by it. Predicted images are obtained by warping the current image, so
one render per iteration suffices. Once the images match, the holes sit at
the stored transforms from the current EEF pose.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import gaussian_filter, map_coordinates

from .augment import LUMA
from .errors import FormatError, LocalizationFailed, TruncatedFile
from .geometry import DEG, MM, BoardLayout, Pose6
from .sensors import LOCALIZER_CAMERA, CameraModel, render_overhead

REFERENCE_MAGIC = b"INBR"
REFERENCE_VERSION = 1
_HEADER = struct.Struct("<4sHHHHQ4x")


@dataclass
class LocalizerConfig:
    search_xy: float = 20 * MM
    search_theta: float = 15 * DEG
    coarse_xy: float = 2 * MM
    coarse_theta: float = 2 * DEG
    fine_xy: float = 0.5 * MM
    fine_theta: float = 0.5 * DEG
    ncc_threshold: float = 0.995
    window_margin: int = 24
    blur_px: float = 1.0
    max_iters: int = 6

    def __post_init__(self):
        if min(self.coarse_xy, self.coarse_theta, self.fine_xy, self.fine_theta) <= 0:
            raise ValueError("grid steps must be positive")
        if not 0 < self.ncc_threshold <= 1:
            raise ValueError("ncc_threshold must lie in (0, 1]")


@dataclass
class ReferenceRecord:
    reference_image: np.ndarray
    reference_eef: Pose6
    hole_deltas: list

    def __post_init__(self):
        if not self.hole_deltas:
            raise ValueError("reference needs at least one hole")

    def __eq__(self, other):
        if not isinstance(other, ReferenceRecord):
            return NotImplemented
        return (
            np.array_equal(self.reference_image, other.reference_image)
            and self.reference_eef == other.reference_eef
            and self.hole_deltas == other.hole_deltas
        )


def register_reference(board: BoardLayout, camera: CameraModel, eef: Pose6) -> ReferenceRecord:
    img = render_overhead(camera, board, eef)
    inv = eef.inverse()
    deltas = [(s.task.task_id, inv.compose(board.socket_world_pose(i))) for i, s in enumerate(board.sockets)]
    return ReferenceRecord(img, eef, deltas)


# -- correlation search -------------------------------------------------------------


def _gray(img: np.ndarray, sigma: float = 0.0) -> np.ndarray:
    g = np.asarray(img, np.float64) @ LUMA
    return gaussian_filter(g, sigma, mode="nearest") if sigma > 0 else g


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    return float(np.sum(a * b) / den) if den > 0 else 0.0


def _sample(gray: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Bilinear lookup at image-plane coordinates in pixels (u right, w up, origin at center)."""
    h, wd = gray.shape
    cols = u + wd / 2 - 0.5
    rows = h / 2 - 0.5 - w
    return map_coordinates(gray, [rows, cols], order=1, mode="nearest")


def _search(gray, ref_win, u0: float, w0: float, center, theta_grid, n_shift: int, shift_px: float):
    """Best (tu, tw, theta, score) among motions center + (R s, theta) on a square shift lattice.

    ``s`` ranges over {-n_shift..n_shift} * shift_px per axis; the window's
    first pixel center sits at image-plane (u0, w0). The current image is
    resampled once per theta on a lattice fine enough that every candidate
    window is a strided slice of it.
    """
    k = 1 if shift_px >= 1 else int(round(1.0 / shift_px))
    stride = int(round(shift_px * k))
    wn = ref_win.shape[0]
    span = 2 * n_shift * stride + (wn - 1) * k + 1
    l = np.arange(span) / k - n_shift * shift_px
    qu, qw = np.meshgrid(u0 + l, w0 - l)
    size = (wn - 1) * k + 1
    ref_c = ref_win - ref_win.mean()
    ref_n = np.sqrt(np.sum(ref_c * ref_c))
    n = ref_win.size
    best = None
    cu, cw, cth = center
    for th in theta_grid:
        c, s = np.cos(cth + th), np.sin(cth + th)
        j = _sample(gray, c * qu - s * qw + cu, s * qu + c * qw + cw)
        wins = sliding_window_view(j, (size, size))[::stride, ::stride, ::k, ::k]
        sums = wins.sum(axis=(2, 3))
        dots = np.einsum("abij,ij->ab", wins, ref_c)
        sq = np.einsum("abij,abij->ab", wins, wins) - sums * sums / n
        score = dots / (np.sqrt(np.maximum(sq, 0)) * ref_n + 1e-300)
        # window row index a moves w by -(a - n) * shift_px
        i = np.unravel_index(np.argmax(score), score.shape)
        val = float(score[i])
        if best is None or val > best[3] + 1e-12:
            sw = -(i[0] - n_shift) * shift_px
            su = (i[1] - n_shift) * shift_px
            best = (cu + c * su - s * sw, cw + s * su + c * sw, cth + th, val)
    return best


def estimate_motion(current: np.ndarray, reference: np.ndarray, camera: CameraModel, cfg: LocalizerConfig):
    """Planar EEF motion (dx, dy, dtheta) making ``current`` look like ``reference``, plus its NCC."""
    gray = _gray(current, cfg.blur_px)
    ref = _gray(reference, cfg.blur_px)
    h, w = ref.shape
    m = cfg.window_margin
    ref_win = ref[m : h - m, m : w - m]
    u0, w0 = m + 0.5 - w / 2, h / 2 - m - 0.5
    px = camera.scale
    n_c = int(round(cfg.search_xy / cfg.coarse_xy))
    nt_c = int(np.floor(cfg.search_theta / cfg.coarse_theta))
    coarse = _search(
        gray, ref_win, u0, w0, (0.0, 0.0, 0.0), np.arange(-nt_c, nt_c + 1) * cfg.coarse_theta,
        n_c, cfg.coarse_xy / px,
    )
    n_f = int(round(cfg.coarse_xy / cfg.fine_xy))
    nt_f = int(round(cfg.coarse_theta / cfg.fine_theta))
    fine = _search(
        gray, ref_win, u0, w0, coarse[:3], np.arange(-nt_f, nt_f + 1) * cfg.fine_theta, n_f, cfg.fine_xy / px,
    )
    best = fine if fine[3] >= coarse[3] else coarse
    return best[0] * px, best[1] * px, best[2], best[3]


def localize(
    ref: ReferenceRecord,
    board: BoardLayout,
    camera: CameraModel = LOCALIZER_CAMERA,
    start_eef: Pose6 | None = None,
    max_iters: int | None = None,
    cfg: LocalizerConfig | None = None,
):
    """Align to the reference; returns ([(task_id, hole world pose)], iterations used)."""
    cfg = cfg or LocalizerConfig()
    max_iters = cfg.max_iters if max_iters is None else max_iters
    start = start_eef or ref.reference_eef
    eef = start
    ref_gray = _gray(ref.reference_image, cfg.blur_px)
    for it in range(1, max_iters + 1):
        img = render_overhead(camera, board, eef)
        if ncc(_gray(img, cfg.blur_px), ref_gray) >= cfg.ncc_threshold:
            return [(tid, eef.compose(d)) for tid, d in ref.hole_deltas], it
        dx, dy, dth, _ = estimate_motion(img, ref.reference_image, camera, cfg)
        eef = eef.compose(Pose6(dx, dy, 0.0, 0.0, 0.0, dth))
        moved = start.inverse().compose(eef)
        # one coarse step of slack so offsets right at the bound still converge
        if (
            max(abs(moved.x), abs(moved.y)) > cfg.search_xy + cfg.coarse_xy
            or abs(moved.theta_z) > cfg.search_theta + cfg.coarse_theta
        ):
            raise LocalizationFailed("board offset outside the search range")
    raise LocalizationFailed(f"images did not match within {max_iters} iterations")


# -- file format -------------------------------------------------------------


def _pose_bytes(p: Pose6) -> bytes:
    return np.asarray(p.as_array(), "<f8").tobytes()


def write_reference(ref: ReferenceRecord, path) -> None:
    h, w, c = ref.reference_image.shape
    parts = [
        _HEADER.pack(REFERENCE_MAGIC, REFERENCE_VERSION, h, w, c, len(ref.hole_deltas)),
        np.ascontiguousarray(ref.reference_image, "<f4").tobytes(),
        _pose_bytes(ref.reference_eef),
    ]
    for tid, d in ref.hole_deltas:
        b = tid.encode("utf-8")
        parts += [struct.pack("<H", len(b)), b, _pose_bytes(d)]
    Path(path).write_bytes(b"".join(parts))


def read_reference(path) -> ReferenceRecord:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(str(exc)) from exc
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedFile("reference file ends early")
        out = buf[pos : pos + n]
        pos += n
        return out

    magic, version, h, w, c, count = _HEADER.unpack(take(_HEADER.size))
    if magic != REFERENCE_MAGIC:
        raise FormatError(f"bad reference magic {magic!r}")
    if version != REFERENCE_VERSION:
        raise FormatError(f"unsupported reference version {version}")
    img = np.frombuffer(take(4 * h * w * c), "<f4").reshape(h, w, c).astype(np.float32)
    eef = Pose6.from_array(np.frombuffer(take(48), "<f8"))
    deltas = []
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        tid = take(n).decode("utf-8")
        deltas.append((tid, Pose6.from_array(np.frombuffer(take(48), "<f8"))))
    if pos != len(buf):
        raise FormatError("trailing bytes in reference file")
    if count == 0:
        raise FormatError("reference file lists no holes")
    return ReferenceRecord(img, eef, deltas)
