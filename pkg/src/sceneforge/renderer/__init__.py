"""Software z-buffer rasterizer producing RGB + object-index + depth passes.

The per-triangle inner loop lives in a kernel module with two interchangeable
implementations: a compiled Cython extension and a pure-numpy fallback. The
compiled kernel is preferred when importable; set ``SCENEFORGE_RASTER=py`` or
``=cy`` to force one. Both produce bit-identical buffers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..entities import Mesh
from ..geometry import CameraPose

_NEAR = 1e-4
FILL_COLOR = np.array([0.52, 0.60, 0.70], dtype=np.float32)

_forced = os.environ.get("SCENEFORGE_RASTER", "").lower()
if _forced not in ("", "py", "cy"):
    raise RuntimeError(f"SCENEFORGE_RASTER must be 'py' or 'cy', got {_forced!r}")

_kernel = None
if _forced in ("", "cy"):
    try:
        from . import _kernel_cy as _kernel  # type: ignore[no-redef]
    except ImportError:
        if _forced == "cy":
            raise
if _kernel is None:
    from . import _kernel_py as _kernel  # type: ignore[no-redef]


def active_kernel() -> str:
    """Name of the rasterization kernel selected at import ('cython' or 'python')."""
    return _kernel.KERNEL_NAME


def get_kernels() -> dict:
    """All importable kernels, for the comparison benchmark and equivalence tests."""
    from . import _kernel_py

    kernels = {"python": _kernel_py}
    try:
        from . import _kernel_cy

        kernels["cython"] = _kernel_cy
    except ImportError:
        pass
    return kernels


@dataclass(frozen=True)
class RenderOutput:
    """Rasterization result: RGB, per-pixel instance id (0 = none), and depth."""

    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1]
    index: np.ndarray  # (H, W) int32
    depth: np.ndarray  # (H, W) float64, +inf where no geometry


def _clip_mesh_near(p_cam: np.ndarray, colors: np.ndarray, faces: np.ndarray):
    """Clip triangles against the z = _NEAR plane in camera space.

    Returns (points, colors, faces) with fully-behind triangles dropped and
    crossing triangles replaced by their clipped fans.
    """
    z = p_cam[:, 2]
    front = z >= _NEAR
    tri_front = front[faces]
    n_front = tri_front.sum(axis=1)

    keep = faces[n_front == 3]
    crossing = faces[(n_front > 0) & (n_front < 3)]
    if len(crossing) == 0:
        return p_cam, colors, keep

    pts_extra = []
    cols_extra = []
    new_faces = [keep]
    next_id = len(p_cam)
    for tri in crossing:
        poly_p = []
        poly_c = []
        for i in range(3):
            a, b = tri[i], tri[(i + 1) % 3]
            pa, pb = p_cam[a], p_cam[b]
            ca, cb = colors[a], colors[b]
            a_in = pa[2] >= _NEAR
            b_in = pb[2] >= _NEAR
            if a_in:
                poly_p.append(pa)
                poly_c.append(ca)
            if a_in != b_in:
                t = (_NEAR - pa[2]) / (pb[2] - pa[2])
                poly_p.append(pa + t * (pb - pa))
                poly_c.append(ca + t * (cb - ca))
        if len(poly_p) < 3:
            continue
        base = next_id
        for p, c in zip(poly_p, poly_c):
            pts_extra.append(p)
            cols_extra.append(c)
            next_id += 1
        for k in range(1, len(poly_p) - 1):
            new_faces.append(np.array([[base, base + k, base + k + 1]], dtype=np.int32))

    if pts_extra:
        p_cam = np.concatenate([p_cam, np.asarray(pts_extra)], axis=0)
        colors = np.concatenate([colors, np.asarray(cols_extra, dtype=np.float32)], axis=0)
    faces_out = np.concatenate(new_faces, axis=0) if new_faces else keep
    return p_cam, colors, np.ascontiguousarray(faces_out, dtype=np.int32)


_SNAP_TOL = 1e-9


def _snap_half_integers(uv: np.ndarray) -> np.ndarray:
    """Snap coordinates within round-off of a pixel center onto it exactly.

    Meshes lifted from a frame have vertices at pixel centers; re-projecting
    them reproduces those centers only up to ~1e-14. The top-left fill rule
    needs the exact values for deterministic edge ownership, so anything
    within _SNAP_TOL of a half-integer is snapped. Generic geometry is
    unaffected (a 1e-9 px displacement is far below raster resolution).
    """
    g = np.round(uv - 0.5) + 0.5
    return np.where(np.abs(uv - g) < _SNAP_TOL, g, uv)


def raster_mesh_into(
    mesh: Mesh,
    instance_id: int,
    cam: CameraPose,
    depth_buf: np.ndarray,
    index_buf: np.ndarray,
    rgb_buf: np.ndarray,
) -> None:
    """Project a world-space mesh and rasterize it into the shared buffers."""
    p_cam = mesh.vertices @ cam.rotation.T + cam.translation
    p_cam, colors, faces = _clip_mesh_near(p_cam, mesh.colors, mesh.faces)
    if len(faces) == 0:
        return
    z = p_cam[:, 2]
    uv = np.empty((len(p_cam), 2), dtype=np.float64)
    uv[:, 0] = cam.fx * p_cam[:, 0] / z + cam.cx
    uv[:, 1] = cam.fy * p_cam[:, 1] / z + cam.cy
    uv = _snap_half_integers(uv)
    _kernel.raster_mesh(
        np.ascontiguousarray(uv),
        np.ascontiguousarray(z),
        faces,
        np.ascontiguousarray(colors, dtype=np.float32),
        int(instance_id),
        depth_buf,
        index_buf,
        rgb_buf,
    )


def rasterize(scene) -> RenderOutput:
    """Render a scene graph: z-buffered meshes over the scene background.

    Entities are drawn in increasing instance-id order; depth ties go to the
    lower id, so output is independent of draw order. Pixels no mesh covers
    show the scene background image, or a constant fill color if there is
    none.
    """
    cam = scene.camera
    h, w = cam.height, cam.width
    depth = np.full((h, w), np.inf, dtype=np.float64)
    index = np.zeros((h, w), dtype=np.int32)
    rgb = np.zeros((h, w, 3), dtype=np.float32)

    for iid in sorted(scene.entities):
        raster_mesh_into(scene.entities[iid].mesh, iid, cam, depth, index, rgb)

    empty = index == 0
    if scene.background is not None:
        bg = np.asarray(scene.background, dtype=np.float32)
        rgb[empty] = bg[empty]
    else:
        rgb[empty] = FILL_COLOR
    return RenderOutput(rgb=rgb, index=index, depth=depth)


def render_pair(src, tgt):
    """Render source and edited scenes, each with its own camera."""
    return rasterize(src), rasterize(tgt)
