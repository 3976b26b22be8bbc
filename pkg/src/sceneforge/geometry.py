"""Cameras, 3D boxes, projection, and Plücker ray maps.

Coordinate conventions used by the whole package:

* world and camera frames are right-handed; the camera looks down +z,
  x points right, y points down (matching image rows/cols),
* image origin is the top-left corner, u grows right and v grows down,
* pixel (col, row) has its center at (col + 0.5, row + 0.5),
* ``world_to_camera`` is a 4x4 rigid transform mapping world points into
  the camera frame,
* quaternions are [w, x, y, z] and act as p' = R(q) p.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, InvalidValue, NonPositiveDepth

# Corner k of a box carries local offset sign (-1|+1) per axis, taken from
# the bits of k: bit0 -> x, bit1 -> y, bit2 -> z, bit set means +1.
CORNER_SIGNS = np.array(
    [[1 if k & (1 << axis) else -1 for axis in range(3)] for k in range(8)],
    dtype=np.float64,
)

_ORTHONORMAL_TOL = 1e-6


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise InvalidValue("zero quaternion")
    return q / n


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion [w, x, y, z]."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a*b, both [w, x, y, z]."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([w, -x, -y, -z])


def matrix_to_quat(R) -> np.ndarray:
    """Unit quaternion [w, x, y, z] of a proper rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return quat_normalize(q)


@dataclass(frozen=True)
class CameraPose:
    """Pinhole camera: intrinsics in pixels plus a world-to-camera transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        w2c = np.asarray(self.world_to_camera, dtype=np.float64)
        if w2c.shape != (4, 4):
            raise InvalidValue("world_to_camera must be 4x4")
        object.__setattr__(self, "world_to_camera", w2c)
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidValue("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidValue("principal point must lie inside the image")
        R = w2c[:3, :3]
        if np.max(np.abs(R.T @ R - np.eye(3))) >= _ORTHONORMAL_TOL:
            raise InvalidValue("rotation block is not orthonormal")
        if np.linalg.det(R) < 0:
            raise InvalidValue("rotation block must have determinant +1")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def camera_to_world(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation.T
        out[:3, 3] = self.center
        return out

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "world_to_camera": [list(map(float, row)) for row in self.world_to_camera],
        }

    @staticmethod
    def from_dict(d: dict) -> "CameraPose":
        return CameraPose(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            world_to_camera=np.asarray(d["world_to_camera"], dtype=np.float64),
        )


def look_at_camera(
    eye, target, up=(0.0, 0.0, 1.0), fx=75.0, fy=75.0, cx=32.0, cy=32.0, width=64, height=64
) -> CameraPose:
    """Camera at ``eye`` looking toward ``target``.

    ``up`` is the world up direction; image y runs opposite to it.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n == 0:
        raise InvalidValue("eye and target coincide")
    fwd = fwd / n
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise InvalidValue("up direction parallel to view direction")
    right = right / rn
    down = np.cross(fwd, right)  # y axis of the camera frame points down
    R = np.stack([right, down, fwd])  # rows: camera axes in world coords
    w2c = np.eye(4)
    w2c[:3, :3] = R
    w2c[:3, 3] = -R @ eye
    return CameraPose(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height, world_to_camera=w2c)


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box: center, positive extents, unit quaternion, identity."""

    center: np.ndarray
    size: np.ndarray
    rotation: np.ndarray  # quaternion [w, x, y, z]
    class_label: str
    instance_id: int

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        size = np.asarray(self.size, dtype=np.float64)
        rot = np.asarray(self.rotation, dtype=np.float64)
        if center.shape != (3,) or size.shape != (3,) or rot.shape != (4,):
            raise InvalidValue("box fields have wrong shapes")
        if not np.all(size > 0):
            raise InvalidValue("box size components must be positive")
        if abs(np.linalg.norm(rot) - 1.0) > 1e-6:
            raise InvalidValue("box quaternion must be unit")
        if self.instance_id <= 0:
            raise InvalidValue("instance_id must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "rotation", rot)

    def corners(self) -> np.ndarray:
        """(8, 3) world-space corners in canonical bit-pattern order."""
        R = quat_to_matrix(self.rotation)
        return self.center[None, :] + (CORNER_SIGNS * (self.size[None, :] / 2.0)) @ R.T

    def to_dict(self) -> dict:
        return {
            "center": list(map(float, self.center)),
            "size": list(map(float, self.size)),
            "rotation": list(map(float, self.rotation)),
            "class_label": self.class_label,
            "instance_id": int(self.instance_id),
        }

    @staticmethod
    def from_dict(d: dict) -> "Box3D":
        return Box3D(
            center=np.asarray(d["center"], dtype=np.float64),
            size=np.asarray(d["size"], dtype=np.float64),
            rotation=np.asarray(d["rotation"], dtype=np.float64),
            class_label=str(d["class_label"]),
            instance_id=int(d["instance_id"]),
        )


@dataclass(frozen=True)
class PluckerMap:
    """Per-pixel 6-channel ray map: unit direction d and moment m = o x d.

    Channels are ordered (d, m) and expressed in the reference camera frame.
    """

    channels: np.ndarray  # (6, h, w)

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 3 or ch.shape[0] != 6:
            raise InvalidValue("plucker map must be (6, h, w)")
        object.__setattr__(self, "channels", ch)

    @property
    def direction(self) -> np.ndarray:
        return self.channels[:3]

    @property
    def moment(self) -> np.ndarray:
        return self.channels[3:]


def transform_points(T: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply a 4x4 rigid transform to (..., 3) points."""
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ T[:3, :3].T + T[:3, 3]


def project_points(pts, cam: CameraPose):
    """Vectorized pinhole projection of (..., 3) world points.

    Returns (uv, depth) without any in-front check; callers decide how to
    treat non-positive depth.
    """
    p_cam = transform_points(cam.world_to_camera, np.asarray(pts, dtype=np.float64))
    z = p_cam[..., 2]
    safe_z = np.where(np.abs(z) < 1e-12, np.where(z < 0, -1e-12, 1e-12), z)
    u = cam.fx * p_cam[..., 0] / safe_z + cam.cx
    v = cam.fy * p_cam[..., 1] / safe_z + cam.cy
    return np.stack([u, v], axis=-1), z


def project_point(p, cam: CameraPose):
    """Project a single world point; raises BehindCamera for z <= 0."""
    uv, z = project_points(np.asarray(p, dtype=np.float64)[None, :], cam)
    if z[0] <= 0:
        raise BehindCamera(f"camera-frame depth {z[0]:.6g} <= 0")
    return float(uv[0, 0]), float(uv[0, 1]), float(z[0])


def backproject_pixels(uv, depth, cam: CameraPose) -> np.ndarray:
    """Vectorized inverse projection of (..., 2) pixels at given depths."""
    uv = np.asarray(uv, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    x = (uv[..., 0] - cam.cx) / cam.fx * depth
    y = (uv[..., 1] - cam.cy) / cam.fy * depth
    p_cam = np.stack([x, y, depth], axis=-1)
    return transform_points(cam.camera_to_world(), p_cam)


def backproject_pixel(u: float, v: float, depth: float, cam: CameraPose) -> np.ndarray:
    if depth <= 0:
        raise NonPositiveDepth(f"depth {depth:.6g} <= 0")
    return backproject_pixels(np.array([[u, v]]), np.array([depth]), cam)[0]


def project_box_corners(box: Box3D, cam: CameraPose):
    """Project the 8 canonical corners to (x, y, depth) rows.

    The box center must be in front of the camera. Individual corners behind
    the camera are not an error: they keep their computed (x, y) and negative
    depth, and are marked in the returned ``behind`` flag array.
    """
    _, cz = project_points(box.center[None, :], cam)
    if cz[0] <= 0:
        raise BehindCamera("box center behind camera")
    uv, z = project_points(box.corners(), cam)
    out = np.concatenate([uv, z[:, None]], axis=1)
    return out, z <= 0


def plucker_map(cam: CameraPose, reference: CameraPose, res) -> PluckerMap:
    """Per-pixel Plücker rays of ``cam``, expressed in ``reference``'s frame.

    ``res`` is (h, w); the grid covers the full image of ``cam`` so the map
    can be built directly at a downsampled conditioning resolution.
    """
    h, w = res
    su = cam.width / w
    sv = cam.height / h
    us = (np.arange(w, dtype=np.float64) + 0.5) * su
    vs = (np.arange(h, dtype=np.float64) + 0.5) * sv
    uu, vv = np.meshgrid(us, vs)
    d_cam = np.stack(
        [(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones_like(uu)], axis=-1
    )
    # cam frame -> world -> reference frame (rotation only for directions)
    R_wc = cam.rotation.T
    R_ref = reference.rotation
    d_ref = d_cam @ (R_ref @ R_wc).T
    d_ref = d_ref / np.linalg.norm(d_ref, axis=-1, keepdims=True)
    o_ref = transform_points(reference.world_to_camera, cam.center[None, :])[0]
    m = np.cross(np.broadcast_to(o_ref, d_ref.shape), d_ref)
    channels = np.concatenate([d_ref, m], axis=-1).transpose(2, 0, 1)
    return PluckerMap(channels=channels)


def relative_pose(a: CameraPose, b: CameraPose) -> np.ndarray:
    """4x4 transform taking points from a's camera frame to b's."""
    return b.world_to_camera @ a.camera_to_world()
