"""Minimal software rasterizer: orthographic cameras over the desk scene.

Conventions. Images are (H, W, 3) float64 arrays in [0, 1], row 0 at the top.
Each camera maps two world axes onto the image: columns always follow world x
(increasing to the right); rows follow y for the top camera and z for the
front camera, with the axis maximum at row 0. A pixel is covered by a world
rectangle iff the pixel's center point lies inside the rectangle (closed).

Painter's order: background, table, cubes sorted back-to-front along the
camera axis, robot links (2 px wide, dark), fingertips (1 px, white).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sim import RobotModel, JointState, forward_kinematics, link_segments

BACKGROUND = (0.5, 0.5, 0.5)
TABLE_COLOR = (0.8, 0.8, 0.8)
LINK_COLOR = (0.15, 0.15, 0.15)
FINGERTIP_COLOR = (1.0, 1.0, 1.0)
CUBE_COLORS = {"blue": (0.0, 0.0, 1.0), "red": (1.0, 0.0, 0.0), "green": (0.0, 1.0, 0.0)}


@dataclass(frozen=True)
class CameraSpec:
    pose: str  # "front" or "top"
    width: int
    height: int
    # world extents mapped onto the image plane: (min, max) per image axis
    window_h: tuple[float, float]  # columns <- world x
    window_v: tuple[float, float]  # rows <- world y (top) or z (front)

    def __post_init__(self):
        if self.pose not in ("front", "top"):
            raise ValueError(f"unknown camera pose {self.pose!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera resolution must be positive")
        if not (self.window_h[0] < self.window_h[1] and self.window_v[0] < self.window_v[1]):
            raise ValueError("camera world window is degenerate")

    def col_centers(self) -> np.ndarray:
        h0, h1 = self.window_h
        return h0 + (np.arange(self.width) + 0.5) * (h1 - h0) / self.width

    def row_centers(self) -> np.ndarray:
        v0, v1 = self.window_v
        return v1 - (np.arange(self.height) + 0.5) * (v1 - v0) / self.height

    def to_pixel(self, h: float, v: float) -> tuple[float, float]:
        """Continuous (row, col) image coordinates of a world point."""
        h0, h1 = self.window_h
        v0, v1 = self.window_v
        c = (h - h0) / (h1 - h0) * self.width - 0.5
        r = (v1 - v) / (v1 - v0) * self.height - 0.5
        return r, c


@dataclass(frozen=True)
class Table:
    """Axis-aligned slab rendered under the cubes."""

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]


def _project_ranges(camera: CameraSpec, x_range, y_range, z_range):
    if camera.pose == "top":
        return x_range, y_range
    return x_range, z_range


def _fill_rect(img, camera: CameraSpec, h_range, v_range, color):
    cols = (camera.col_centers() >= h_range[0]) & (camera.col_centers() <= h_range[1])
    rows = (camera.row_centers() >= v_range[0]) & (camera.row_centers() <= v_range[1])
    img[np.ix_(rows, cols)] = color


def _draw_segment(img, camera: CameraSpec, p0, p1, color):
    """2-px-wide line by dense sampling along the segment."""
    if camera.pose == "top":
        a0, b0 = (p0[0], p0[1]), (p1[0], p1[1])
    else:
        a0, b0 = (p0[0], p0[2]), (p1[0], p1[2])
    r0, c0 = camera.to_pixel(*a0)
    r1, c1 = camera.to_pixel(*b0)
    n = 2 * int(np.ceil(max(abs(r1 - r0), abs(c1 - c0), 1.0))) + 1
    h, w = img.shape[:2]
    for t in np.linspace(0.0, 1.0, n):
        r = int(np.floor(r0 + t * (r1 - r0) + 0.5))
        c = int(np.floor(c0 + t * (c1 - c0) + 0.5))
        for dr in (0, 1):
            for dc in (0, 1):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w:
                    img[rr, cc] = color


def _draw_point(img, camera: CameraSpec, p, color):
    if camera.pose == "top":
        r, c = camera.to_pixel(p[0], p[1])
    else:
        r, c = camera.to_pixel(p[0], p[2])
    rr = int(np.floor(r + 0.5))
    cc = int(np.floor(c + 0.5))
    if 0 <= rr < img.shape[0] and 0 <= cc < img.shape[1]:
        img[rr, cc] = color


def render_scene(model: RobotModel | None, state: JointState | None, objects,
                 camera: CameraSpec, table: Table | None = None) -> np.ndarray:
    """Render one camera view; returns an (H, W, 3) float64 image in [0, 1]."""
    img = np.empty((camera.height, camera.width, 3))
    img[:] = BACKGROUND
    if table is not None:
        h_range, v_range = _project_ranges(camera, table.x_range, table.y_range, table.z_range)
        _fill_rect(img, camera, h_range, v_range, TABLE_COLOR)
    # back-to-front: top camera looks down -z, front camera looks along +y
    if camera.pose == "top":
        order = sorted(range(len(objects)), key=lambda i: (objects[i].center[2], i))
    else:
        order = sorted(range(len(objects)), key=lambda i: (-objects[i].center[1], i))
    for i in order:
        obj = objects[i]
        he = obj.half_extent
        cx, cy, cz = obj.center
        h_range, v_range = _project_ranges(
            camera, (cx - he, cx + he), (cy - he, cy + he), (cz - he, cz + he)
        )
        _fill_rect(img, camera, h_range, v_range, CUBE_COLORS[obj.color])
    if model is not None and state is not None:
        frames, tips = forward_kinematics(model, state)
        for p0, p1 in link_segments(model, frames):
            _draw_segment(img, camera, p0, p1, LINK_COLOR)
        for tip in tips:
            _draw_point(img, camera, tip, FINGERTIP_COLOR)
    return img


def write_ppm(path, img: np.ndarray):
    """Binary PPM (P6) with 8-bit channels."""
    h, w, _ = img.shape
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
