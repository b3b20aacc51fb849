"""Pinhole camera model and the lifting plane through the world origin.

Conventions: OpenCV-style camera frame (x right, y down, z forward), pixel
origin at the top-left. The camera pose is camera-to-world (rotation
quaternion + camera center). The lifting plane always contains the world
origin and is orthogonal to the camera's view axis, with its normal facing
the camera, so positive lifting distances move points toward the viewer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transforms import normalize_quaternions, quat_to_matrix, matrix_to_quat
from .validation import as_float_array, check_finite, check_positive


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        check_positive(self.fx, "fx")
        check_positive(self.fy, "fy")
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")
        self.rotation = as_float_array(self.rotation, "rotation", (4,))
        self.translation = as_float_array(self.translation, "translation", (3,))
        norm = float(np.linalg.norm(self.rotation))
        if norm < 1e-12:
            raise ValueError("camera rotation quaternion has zero norm")
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"camera rotation quaternion must be unit (norm {norm:.12f})")

    def rotation_matrix(self) -> np.ndarray:
        """Camera-to-world rotation, columns are the camera axes in world."""
        return quat_to_matrix(self.rotation)

    @property
    def forward(self) -> np.ndarray:
        return self.rotation_matrix()[:, 2]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        R = self.rotation_matrix()
        return (np.atleast_2d(points) - self.translation) @ R

    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def transformed(self, R: np.ndarray, t: np.ndarray) -> "Camera":
        """The camera after the rigid world motion x -> R @ x + t."""
        R = as_float_array(R, "R", (3, 3))
        t = as_float_array(t, "t", (3,))
        new_rot = matrix_to_quat(R @ self.rotation_matrix())
        return Camera(
            self.fx, self.fy, self.cx, self.cy, self.width, self.height,
            rotation=new_rot, translation=R @ self.translation + t,
        )


@dataclass
class ImagePlane:
    u_axis: np.ndarray
    v_axis: np.ndarray
    normal: np.ndarray
    extent: float
    grid_res: int

    def __post_init__(self):
        for name in ("u_axis", "v_axis", "normal"):
            setattr(self, name, as_float_array(getattr(self, name), name, (3,)))
        basis = np.stack([self.u_axis, self.v_axis, self.normal])
        if not np.allclose(basis @ basis.T, np.eye(3), atol=1e-9):
            raise ValueError("plane axes/normal must be orthonormal")
        check_positive(self.extent, "extent")
        if self.grid_res < 2:
            raise ValueError("grid_res must be >= 2")

    @property
    def origin_point(self) -> np.ndarray:
        # The lifting plane always passes through the world origin.
        return np.zeros(3)


def plane_through_origin(camera: Camera, grid_res: int, extent: float = 1.0):
    """Build the camera-aligned plane through the origin plus its pixel grid.

    Returns ``(plane, grid_points)`` where `grid_points` has shape
    ``(grid_res**2, 3)``, row-major over (v, u), uniformly sampling
    ``[-extent, extent]^2`` in the plane's (u, v) coordinates. The plane
    normal faces the camera center.
    """
    if grid_res < 2:
        raise ValueError("grid_res must be >= 2")
    check_positive(extent, "extent")
    R = camera.rotation_matrix()
    u_axis, v_axis, forward = R[:, 0], R[:, 1], R[:, 2]
    plane = ImagePlane(u_axis=u_axis, v_axis=v_axis, normal=-forward,
                       extent=float(extent), grid_res=int(grid_res))
    coords = np.linspace(-extent, extent, grid_res)
    uu, vv = np.meshgrid(coords, coords, indexing="xy")
    grid_points = uu.reshape(-1, 1) * u_axis + vv.reshape(-1, 1) * v_axis
    return plane, grid_points


def project(camera: Camera, points: np.ndarray):
    """Pinhole projection of world points.

    Returns ``(pixels, depth, in_front)``: pixel coordinates ``(N, 2)``,
    view-axis depth ``(N,)``, and a bool mask flagging points in front of
    the camera. Points behind the camera still get (extrapolated) pixel
    values but are flagged False. Scalar input gives unbatched outputs.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = check_finite(np.atleast_2d(pts), "points")
    cam = camera.world_to_camera(pts)
    z = cam[:, 2]
    in_front = z > 0.0
    safe_z = np.where(np.abs(z) > 1e-12, z, 1e-12)
    px = camera.fx * cam[:, 0] / safe_z + camera.cx
    py = camera.fy * cam[:, 1] / safe_z + camera.cy
    pixels = np.stack([px, py], axis=-1)
    if single:
        return pixels[0], float(z[0]), bool(in_front[0])
    return pixels, z, in_front


def unproject(camera: Camera, pixels: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Inverse of `project` at a given view depth; used for test round trips."""
    pix = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    depth = np.atleast_1d(np.asarray(depth, dtype=np.float64))
    x = (pix[:, 0] - camera.cx) / camera.fx * depth
    y = (pix[:, 1] - camera.cy) / camera.fy * depth
    cam = np.stack([x, y, depth], axis=-1)
    R = camera.rotation_matrix()
    return cam @ R.T + camera.translation


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world rotation quaternion looking from `eye` toward `target`.

    `up` is the world up direction; with the y-down camera convention the
    camera's y axis ends up anti-parallel to it.
    """
    eye = as_float_array(eye, "eye", (3,))
    target = as_float_array(target, "target", (3,))
    up = as_float_array(up, "up", (3,))
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    fwd = fwd / n
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        # View axis parallel to up; pick an arbitrary perpendicular.
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        rn = np.linalg.norm(right)
        if rn < 1e-9:
            right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
            rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=1)
    return matrix_to_quat(R)


def orbit_camera(yaw_deg: float, pitch_deg: float, distance: float,
                 fov_deg: float, resolution: int) -> Camera:
    """Camera on a sphere around the origin, looking at the origin.

    Yaw rotates about world +y (0 = looking down -z from +z), pitch tilts
    up (+) / down (-). Shared by the CLI `render` command and the HTTP
    service so both produce identical frames for identical arguments.
    """
    check_positive(distance, "distance")
    if not 1.0 <= fov_deg <= 170.0:
        raise ValueError("fov_deg must lie in [1, 170]")
    yaw = np.deg2rad(yaw_deg)
    pitch = np.deg2rad(pitch_deg)
    eye = distance * np.array(
        [np.cos(pitch) * np.sin(yaw), np.sin(pitch), np.cos(pitch) * np.cos(yaw)]
    )
    rot = look_at(eye)
    f = 0.5 * resolution / np.tan(0.5 * np.deg2rad(fov_deg))
    c = 0.5 * (resolution - 1)
    return Camera(fx=f, fy=f, cx=c, cy=c, width=resolution, height=resolution,
                  rotation=normalize_quaternions(rot), translation=eye)
