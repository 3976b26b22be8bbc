"""Lift a 2D frame plus provider outputs into per-object editable 3D meshes.

Providers (segmentation, metric depth, 2D grounding) are behind small
interfaces. The oracle implementations read ground truth from a synthetic
video and are deterministic; adapters for external models plug into the same
slots and are out of scope here.

Per object the pipeline is: project the 3D box to a 2D box, optionally
replace it with the grounder's box when the two overlap strongly, segment,
restrict the depth map to the mask, align the depth scale to the 3D box, and
triangulate the masked depth surface into a mesh colored by the frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .entities import LiftedEntity, Mesh
from .errors import BehindCamera, EmptyMesh, InvalidValue, TooFewPixels
from .geometry import Box3D, CameraPose, backproject_pixels, project_box_corners, project_points
from .scene import SceneGraph

MIN_ALIGN_PIXELS = 16
DEPTH_JUMP_TOL = 0.25  # relative depth jump above which triangles are culled


@dataclass(frozen=True)
class ObjectMask:
    instance_id: int
    mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2 or not m.any():
            raise InvalidValue("object mask must be a nonempty 2D array")
        object.__setattr__(self, "mask", m)


@dataclass(frozen=True)
class DepthMap:
    depth: np.ndarray  # (H, W) float32, world units
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float32)
        v = np.asarray(self.valid, dtype=bool)
        if d.shape != v.shape or d.ndim != 2:
            raise InvalidValue("depth and validity must be matching 2D arrays")
        if np.any(d[v] <= 0):
            raise InvalidValue("valid depths must be positive")
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", v)


class Segmenter:
    """Mask provider interface; prompted with a 2D box and a class label."""

    def segment(self, frame, box2d, class_label, instance_hint=None) -> ObjectMask | None:
        raise NotImplementedError


class DepthEstimator:
    """Full-frame metric depth provider interface."""

    def estimate(self, frame) -> DepthMap:
        raise NotImplementedError


class Grounder:
    """Category-prompted 2D detector interface; may return None."""

    def ground(self, frame, class_label, instance_hint=None):
        raise NotImplementedError


@dataclass
class ProviderBundle:
    segmenter: Segmenter
    depth_estimator: DepthEstimator
    grounder: Grounder
    name: str = "custom"


class OracleSegmenter(Segmenter):
    def __init__(self, video, frame_index: int):
        self._masks = video.masks[frame_index]

    def segment(self, frame, box2d, class_label, instance_hint=None):
        m = self._masks == instance_hint
        if not m.any():
            return None
        return ObjectMask(instance_id=int(instance_hint), mask=m)


class OracleDepthEstimator(DepthEstimator):
    def __init__(self, video, frame_index: int):
        self._depth = video.depths[frame_index]

    def estimate(self, frame) -> DepthMap:
        valid = np.isfinite(self._depth) & (self._depth > 0)
        d = np.where(valid, self._depth, 1.0).astype(np.float32)
        return DepthMap(depth=d, valid=valid)


class OracleGrounder(Grounder):
    def __init__(self, video, frame_index: int):
        self._masks = video.masks[frame_index]

    def ground(self, frame, class_label, instance_hint=None):
        m = self._masks == instance_hint
        if not m.any():
            return None
        ys, xs = np.nonzero(m)
        # tight box in continuous pixel coordinates
        return (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


def oracle_providers(video, frame_index: int) -> ProviderBundle:
    return ProviderBundle(
        segmenter=OracleSegmenter(video, frame_index),
        depth_estimator=OracleDepthEstimator(video, frame_index),
        grounder=OracleGrounder(video, frame_index),
        name="oracle",
    )


# --- 2D boxes ---------------------------------------------------------------


def box2d_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    ix = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    iy = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = ix * iy
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def refine_box2d(projected, grounded):
    """Adopt the grounded box only when it strongly overlaps the projection.

    The replacement threshold is strict: IoU must exceed 0.5, equality keeps
    the projected box.
    """
    if projected is None or projected[2] <= projected[0] or projected[3] <= projected[1]:
        raise InvalidValue("projected box is empty")
    if grounded is None:
        return projected
    return grounded if box2d_iou(projected, grounded) > 0.5 else projected


def project_box_to_2d(box: Box3D, cam: CameraPose):
    """2D bounding box of the in-front corners, clipped to the frame.

    Returns None when no corner is usable or the clip is empty.
    """
    corners, behind = project_box_corners(box, cam)
    pts = corners[~behind]
    if len(pts) == 0:
        return None
    x0 = max(0.0, float(pts[:, 0].min()))
    y0 = max(0.0, float(pts[:, 1].min()))
    x1 = min(float(cam.width), float(pts[:, 0].max()))
    y1 = min(float(cam.height), float(pts[:, 1].max()))
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1, y1)


# --- depth alignment and lifting ---------------------------------------------


def align_depth_scale(depth: DepthMap, mask: ObjectMask, box: Box3D, cam: CameraPose) -> float:
    """Scale factor putting the masked depth median at the box-center depth."""
    sel = mask.mask & depth.valid
    n = int(sel.sum())
    if n < MIN_ALIGN_PIXELS:
        raise TooFewPixels(f"{n} valid masked pixels < {MIN_ALIGN_PIXELS}")
    _, z = project_points(box.center[None, :], cam)
    if z[0] <= 0:
        raise BehindCamera("box center behind camera")
    return float(z[0]) / float(np.median(depth.depth[sel]))


def lift_to_mesh(
    frame: np.ndarray,
    depth: DepthMap,
    mask: ObjectMask,
    scale: float,
    cam: CameraPose,
) -> Mesh:
    """Triangulate the masked, scale-aligned depth surface.

    Every masked valid pixel becomes a vertex at its back-projected center.
    Fully-masked 2x2 quads produce two triangles; quads with exactly three
    masked pixels produce one, which keeps staircase silhouettes solid.
    Triangles spanning a relative depth jump above DEPTH_JUMP_TOL are culled
    so foreground does not smear onto background at occlusion boundaries.
    """
    sel = mask.mask & depth.valid
    if not sel.any():
        raise EmptyMesh("no valid masked pixels")
    h, w = sel.shape
    ys, xs = np.nonzero(sel)
    z = depth.depth[ys, xs].astype(np.float64) * scale
    uv = np.stack([xs + 0.5, ys + 0.5], axis=1).astype(np.float64)
    verts = backproject_pixels(uv, z, cam)
    colors = np.asarray(frame, dtype=np.float32)[ys, xs]

    vid = np.full((h, w), -1, dtype=np.int64)
    vid[ys, xs] = np.arange(len(ys))

    q00 = sel[:-1, :-1]
    q01 = sel[:-1, 1:]
    q10 = sel[1:, :-1]
    q11 = sel[1:, 1:]
    count = (
        q00.astype(np.int8) + q01.astype(np.int8) + q10.astype(np.int8) + q11.astype(np.int8)
    )

    i00 = vid[:-1, :-1]
    i01 = vid[:-1, 1:]
    i10 = vid[1:, :-1]
    i11 = vid[1:, 1:]

    full = count == 4
    tris = [
        np.stack([i00[full], i01[full], i10[full]], axis=1),
        np.stack([i10[full], i01[full], i11[full]], axis=1),
    ]
    part = count == 3
    if part.any():
        ids = np.stack([i00[part], i01[part], i10[part], i11[part]], axis=1)
        ids = np.sort(ids, axis=1)[:, 1:]  # drop the single -1
        # restore screen winding: sorted vertex ids are row-major, already
        # top-to-bottom / left-to-right, which matches the full-quad order
        tris.append(ids)
    faces = np.concatenate(tris, axis=0).astype(np.int32)
    if len(faces) == 0:
        raise EmptyMesh("mask has no 2x2 neighborhoods to triangulate")

    zf = z[faces]
    jump = (zf.max(axis=1) - zf.min(axis=1)) / zf.min(axis=1)
    faces = faces[jump <= DEPTH_JUMP_TOL]
    if len(faces) == 0:
        raise EmptyMesh("all triangles culled by the depth-jump filter")

    used = np.unique(faces)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Mesh(
        vertices=verts[used],
        colors=colors[used],
        faces=remap[faces].astype(np.int32),
    )


@dataclass(frozen=True)
class SkipRecord:
    instance_id: int
    reason: str


@dataclass(frozen=True)
class LiftResult:
    scene: SceneGraph
    skipped: tuple = ()


def lift_scene(
    frame: np.ndarray,
    boxes: list,
    providers: ProviderBundle,
    cam: CameraPose,
) -> LiftResult:
    """Lift every boxed object in the frame into a scene graph.

    Per-object failures (occluded, too few pixels, empty mesh) do not abort
    the scene; they are returned as skip records. The frame itself becomes
    the scene background.
    """
    ids = [b.instance_id for b in boxes]
    if len(set(ids)) != len(ids):
        raise InvalidValue("instance ids must be unique")

    depth = providers.depth_estimator.estimate(frame)
    entities: dict = {}
    poses: dict = {}
    skipped = []
    for box in sorted(boxes, key=lambda b: b.instance_id):
        try:
            projected = project_box_to_2d(box, cam)
            if projected is None:
                raise BehindCamera("box projects outside the frame")
            grounded = providers.grounder.ground(frame, box.class_label, box.instance_id)
            box2d = refine_box2d(projected, grounded)
            obj_mask = providers.segmenter.segment(frame, box2d, box.class_label, box.instance_id)
            if obj_mask is None:
                raise TooFewPixels("segmenter found no pixels")
            scale = align_depth_scale(depth, obj_mask, box, cam)
            mesh = lift_to_mesh(frame, depth, obj_mask, scale, cam)
        except (BehindCamera, TooFewPixels, EmptyMesh, InvalidValue) as exc:
            skipped.append(SkipRecord(box.instance_id, f"{type(exc).__name__}: {exc}"))
            continue
        entities[box.instance_id] = LiftedEntity(
            instance_id=box.instance_id,
            class_label=box.class_label,
            mesh=mesh,
            source_box=box,
            provenance={"providers": providers.name, "alignment_scale": scale},
        )
        poses[box.instance_id] = box
    scene = SceneGraph(
        entities=entities,
        poses=poses,
        camera=cam,
        background=np.asarray(frame, dtype=np.float32),
    )
    return LiftResult(scene=scene, skipped=tuple(skipped))
