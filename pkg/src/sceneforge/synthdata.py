"""Desk-scale synthetic multi-object video generator.

Each video is a handful of colored primitives (cube / sphere / cone) sliding
on a textured ground plane while the camera orbits. Frames are produced by
this package's own rasterizer, so the stored masks, depths, boxes, and
cameras are exact oracles for everything downstream: re-rendering the ground
truth scene reproduces the stored frame bit for bit.

Generation is deterministic per (config, seed). Draws that produce tiny or
heavily occluded silhouettes at the stride frames are rejected and redrawn
from a derived seed, so every emitted video satisfies the documented
constraints: per-object silhouette quality at stride frames, at least one
object with >= 5 px of projected motion, and a camera pose that actually
changes over the clip.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import imageio
from .entities import LiftedEntity, Mesh
from .errors import BadConfig, HashMismatch
from .geometry import Box3D, CameraPose, look_at_camera, project_points, quat_to_matrix
from .renderer import rasterize
from .scene import SceneGraph

PLANE_ID = 200  # ground plane instance id; never annotated as an object

_LIGHT = np.array([0.32, 0.22, 0.92])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)

# small fixed palettes keep the visual vocabulary narrow enough for the
# toy codec to generalize across videos
_PALETTE = np.array(
    [
        [0.88, 0.18, 0.16],
        [0.16, 0.45, 0.88],
        [0.95, 0.72, 0.12],
        [0.18, 0.70, 0.32],
        [0.78, 0.22, 0.75],
        [0.10, 0.72, 0.72],
        [0.94, 0.46, 0.12],
        [0.92, 0.90, 0.86],
    ]
)
_PLANE_PAIRS = [
    (np.array([0.32, 0.30, 0.28]), np.array([0.55, 0.50, 0.42])),
    (np.array([0.25, 0.35, 0.30]), np.array([0.45, 0.58, 0.48])),
    (np.array([0.30, 0.28, 0.38]), np.array([0.52, 0.48, 0.62])),
    (np.array([0.38, 0.33, 0.25]), np.array([0.62, 0.55, 0.40])),
]


@dataclass(frozen=True)
class GeneratorConfig:
    resolution: int = 64
    frames: int = 24
    n_objects: tuple = (3, 4)
    shapes: tuple = ("cube", "sphere", "cone")
    cube_size: tuple = (2.3, 2.7)
    sphere_diameter: tuple = (2.6, 3.0)
    cone_base: tuple = (3.1, 3.5)
    placement_radius: float = 2.9
    separation_factor: float = 0.8  # of summed footprint radii
    min_gap: float = 0.0  # extra spacing beyond that
    plane_half: float = 14.0
    plane_grid: int = 18
    fx: float = 92.0
    orbit_radius: tuple = (5.0, 5.8)
    orbit_height: tuple = (4.0, 4.6)
    azimuth_span_deg: tuple = (14.0, 30.0)
    look_at: tuple = (0.0, 0.0, 0.9)
    source_stride: int = 4
    min_mask_area: int = 250
    min_silhouette_iou: float = 0.925
    min_motion_px: float = 5.0
    max_attempts: int = 150

    def validate(self) -> None:
        if self.resolution % 8 != 0 or self.resolution < 16:
            raise BadConfig("resolution must be a multiple of 8, >= 16")
        if self.frames < 2:
            raise BadConfig("need at least 2 frames")
        lo, hi = self.n_objects
        if not (0 <= lo <= hi):
            raise BadConfig("bad n_objects range")
        if not set(self.shapes) <= {"cube", "sphere", "cone"}:
            raise BadConfig(f"unknown shapes in {self.shapes}")
        if self.source_stride < 1:
            raise BadConfig("source_stride must be >= 1")


@dataclass
class SyntheticVideo:
    name: str
    seed: int
    config: dict
    frames_u8: np.ndarray  # (N, H, W, 3) uint8
    cameras: list  # N CameraPose
    boxes: list  # N lists of Box3D
    masks: np.ndarray  # (N, H, W) int32, 0 = not an annotated object
    depths: np.ndarray  # (N, H, W) float32, +inf where empty
    classes: list  # class vocabulary present in the video
    _object_meshes: dict | None = None  # id -> local Mesh (only when generated)

    @property
    def n_frames(self) -> int:
        return len(self.frames_u8)

    def frame(self, i: int) -> np.ndarray:
        """(H, W, 3) float32 in [0, 1]."""
        return imageio.u8_to_img(self.frames_u8[i])

    def object_ids(self, i: int) -> list[int]:
        return [b.instance_id for b in self.boxes[i]]

    def source_indices(self) -> list[int]:
        stride = int(self.config.get("source_stride", 4))
        return list(range(0, self.n_frames, stride))

    def scene_at(self, i: int) -> SceneGraph:
        """Ground-truth scene graph for frame i (generated videos only)."""
        if self._object_meshes is None:
            raise BadConfig("ground-truth scene unavailable for loaded videos")
        entities = {}
        poses = {}
        for box in self.boxes[i]:
            local = self._object_meshes[box.instance_id]
            R = quat_to_matrix(box.rotation)
            world = local.transformed(lambda v, R=R, c=box.center: v @ R.T + c)
            entities[box.instance_id] = LiftedEntity(
                instance_id=box.instance_id,
                class_label=box.class_label,
                mesh=world,
                source_box=box,
            )
            poses[box.instance_id] = box
        plane = self._object_meshes[PLANE_ID]
        entities[PLANE_ID] = LiftedEntity(
            instance_id=PLANE_ID,
            class_label="plane",
            mesh=plane,
            source_box=Box3D(
                center=np.zeros(3),
                size=np.array([1.0, 1.0, 1.0]),
                rotation=np.array([1.0, 0.0, 0.0, 0.0]),
                class_label="plane",
                instance_id=PLANE_ID,
            ),
        )
        poses[PLANE_ID] = entities[PLANE_ID].source_box
        return SceneGraph(entities=entities, poses=poses, camera=self.cameras[i], background=None)


# --- primitive meshes -------------------------------------------------------


def _shade(base: np.ndarray, normals: np.ndarray) -> np.ndarray:
    lam = np.clip(normals @ _LIGHT, 0.0, 1.0)
    return np.clip(base[None, :] * (0.62 + 0.38 * lam[:, None]), 0.0, 1.0).astype(np.float32)


def _cube_mesh(size, base_color) -> Mesh:
    hx, hy, hz = np.asarray(size, dtype=np.float64) / 2.0
    faces_def = [
        (np.array([0, 0, 1.0]), [(-hx, -hy, hz), (hx, -hy, hz), (hx, hy, hz), (-hx, hy, hz)]),
        (np.array([0, 0, -1.0]), [(-hx, hy, -hz), (hx, hy, -hz), (hx, -hy, -hz), (-hx, -hy, -hz)]),
        (np.array([1.0, 0, 0]), [(hx, -hy, -hz), (hx, hy, -hz), (hx, hy, hz), (hx, -hy, hz)]),
        (np.array([-1.0, 0, 0]), [(-hx, hy, -hz), (-hx, -hy, -hz), (-hx, -hy, hz), (-hx, hy, hz)]),
        (np.array([0, 1.0, 0]), [(hx, hy, -hz), (-hx, hy, -hz), (-hx, hy, hz), (hx, hy, hz)]),
        (np.array([0, -1.0, 0]), [(-hx, -hy, -hz), (hx, -hy, -hz), (hx, -hy, hz), (-hx, -hy, hz)]),
    ]
    verts, cols, tris = [], [], []
    for normal, quad in faces_def:
        b = len(verts)
        verts.extend(quad)
        cols.append(_shade(base_color, np.tile(normal, (4, 1))))
        tris.extend([[b, b + 1, b + 2], [b, b + 2, b + 3]])
    return Mesh(
        vertices=np.asarray(verts, dtype=np.float64),
        colors=np.concatenate(cols, axis=0),
        faces=np.asarray(tris, dtype=np.int32),
    )


def _sphere_mesh(diameter, base_color, rings=10, segments=16) -> Mesh:
    r = diameter / 2.0
    verts = [(0.0, 0.0, r)]
    for i in range(1, rings):
        phi = np.pi * i / rings
        for j in range(segments):
            th = 2 * np.pi * j / segments
            verts.append((r * np.sin(phi) * np.cos(th), r * np.sin(phi) * np.sin(th), r * np.cos(phi)))
    verts.append((0.0, 0.0, -r))
    verts = np.asarray(verts, dtype=np.float64)
    tris = []
    for j in range(segments):
        tris.append([0, 1 + j, 1 + (j + 1) % segments])
    for i in range(rings - 2):
        a = 1 + i * segments
        b = 1 + (i + 1) * segments
        for j in range(segments):
            j2 = (j + 1) % segments
            tris.append([a + j, b + j, b + j2])
            tris.append([a + j, b + j2, a + j2])
    last = len(verts) - 1
    a = 1 + (rings - 2) * segments
    for j in range(segments):
        tris.append([last, a + (j + 1) % segments, a + j])
    normals = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    return Mesh(
        vertices=verts,
        colors=_shade(base_color, normals),
        faces=np.asarray(tris, dtype=np.int32),
    )


def _cone_mesh(base_diameter, base_color, segments=18) -> Mesh:
    # Squat frustum: wide top keeps the silhouette compact at 64x64.
    rb = base_diameter / 2.0
    rt = 0.62 * rb
    h = 0.62 * base_diameter
    th = 2 * np.pi * np.arange(segments) / segments
    bot = np.stack([rb * np.cos(th), rb * np.sin(th), np.full(segments, -h / 2)], axis=1)
    top = np.stack([rt * np.cos(th), rt * np.sin(th), np.full(segments, h / 2)], axis=1)
    cb = np.array([[0.0, 0.0, -h / 2]])
    ct = np.array([[0.0, 0.0, h / 2]])
    verts = np.concatenate([bot, top, cb, ct], axis=0)
    slope = np.stack([np.cos(th), np.sin(th), np.full(segments, (rb - rt) / h)], axis=1)
    normals = np.concatenate(
        [slope, slope, np.array([[0.0, 0.0, -1.0]]), np.array([[0.0, 0.0, 1.0]])], axis=0
    )
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    tris = []
    for j in range(segments):
        j2 = (j + 1) % segments
        tris.append([j, j2, segments + j])
        tris.append([j2, segments + j2, segments + j])
        tris.append([2 * segments, j2, j])  # bottom cap
        tris.append([2 * segments + 1, segments + j, segments + j2])  # top cap
    return Mesh(
        vertices=verts,
        colors=_shade(base_color, normals),
        faces=np.asarray(tris, dtype=np.int32),
    )


def _plane_mesh(half: float, grid: int, rng: np.random.Generator) -> Mesh:
    xs = np.linspace(-half, half, grid + 1)
    xx, yy = np.meshgrid(xs, xs)
    verts = np.stack([xx, yy, np.zeros_like(xx)], axis=-1).reshape(-1, 3)
    c1, c2 = _PLANE_PAIRS[int(rng.integers(len(_PLANE_PAIRS)))]
    # texture parameters come from small discrete sets so held-out videos
    # stay inside the vocabulary the toy codec has seen
    kx, ky, k2 = (float(rng.choice([0.3, 0.45, 0.6])) for _ in range(3))
    p1, p2, p3 = (float(rng.choice([0.0, np.pi / 2, np.pi, 3 * np.pi / 2])) for _ in range(3))
    w = (
        0.5
        + 0.32 * np.sin(kx * verts[:, 0] + p1) * np.cos(ky * verts[:, 1] + p2)
        + 0.18 * np.sin(k2 * (verts[:, 0] + verts[:, 1]) + p3)
    )
    w = np.clip(w, 0.0, 1.0)[:, None]
    colors = np.clip(c1[None, :] * (1 - w) + c2[None, :] * w, 0.0, 1.0).astype(np.float32)
    tris = []
    n = grid + 1
    for r in range(grid):
        for c in range(grid):
            a, b = r * n + c, r * n + c + 1
            d, e = (r + 1) * n + c, (r + 1) * n + c + 1
            tris.extend([[a, b, d], [d, b, e]])
    return Mesh(vertices=verts, colors=colors, faces=np.asarray(tris, dtype=np.int32))


# --- generation --------------------------------------------------------------


def _silhouette_iou(mask: np.ndarray) -> float:
    """IoU the center-vertex mesh lift can recover from this mask.

    Mirrors the lifting rule (two triangles per fully-masked 2x2 quad, one
    per 3-masked quad) and the rasterizer's top-left ownership: a 2x2 cell
    covers its top-left pixel unless the top edge is broken, and a cell
    missing only its top-right pixel covers its bottom-right one.
    """
    m = mask
    if m.sum() == 0:
        return 0.0
    cov = np.zeros_like(m)
    cov[:-1, :-1] |= m[:-1, :-1] & m[:-1, 1:] & (m[1:, :-1] | m[1:, 1:])
    cov[1:, 1:] |= m[:-1, :-1] & m[1:, :-1] & m[1:, 1:] & ~m[:-1, 1:]
    return float(cov.sum()) / float(m.sum())


def _yaw_quat(angle: float) -> np.ndarray:
    return np.array([np.cos(angle / 2), 0.0, 0.0, np.sin(angle / 2)])


@dataclass
class _ObjectDraw:
    shape: str
    size: np.ndarray  # box extents
    yaw: float
    color: np.ndarray
    pos0: np.ndarray  # (x, y) at t=0
    vel: np.ndarray  # (x, y) total displacement over the clip


def _draw_objects(cfg: GeneratorConfig, rng: np.random.Generator):
    """List of object draws, or None when placement failed and the caller
    should redraw the whole attempt. An empty list is a valid zero-object
    scene."""
    n = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    draws: list[_ObjectDraw] = []
    for _ in range(n):
        shape = str(rng.choice(list(cfg.shapes)))
        if shape == "cube":
            size = rng.uniform(*cfg.cube_size, size=3)
        elif shape == "sphere":
            d = rng.uniform(*cfg.sphere_diameter)
            size = np.array([d, d, d])
        else:
            d = rng.uniform(*cfg.cone_base)
            size = np.array([d, d, 0.62 * d])
        color = _PALETTE[int(rng.integers(len(_PALETTE)))].copy()
        color = np.clip(color + rng.uniform(-0.04, 0.04, size=3), 0.0, 1.0)

        footprint = float(np.hypot(size[0], size[1])) / 2.0
        for _try in range(200):
            ang = rng.uniform(0, 2 * np.pi)
            rad = cfg.placement_radius * np.sqrt(rng.uniform(0.3, 1.0))
            pos0 = np.array([rad * np.cos(ang), rad * np.sin(ang)])
            if rng.uniform() < 0.4:
                vel = np.zeros(2)
            else:
                mang = rng.uniform(0, 2 * np.pi)
                vel = rng.uniform(0.5, 1.1) * np.array([np.cos(mang), np.sin(mang)])
            if np.linalg.norm(pos0 + vel) > cfg.placement_radius + 1.0:
                continue
            ok = True
            for other in draws:
                of = float(np.hypot(other.size[0], other.size[1])) / 2.0
                need = cfg.separation_factor * (footprint + of) + cfg.min_gap
                for ta, tb in ((pos0, other.pos0), (pos0 + vel, other.pos0 + other.vel)):
                    if np.linalg.norm(ta - tb) < need:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                draws.append(
                    _ObjectDraw(
                        shape=shape,
                        size=size,
                        yaw=rng.uniform(0, 2 * np.pi),
                        color=color,
                        pos0=pos0,
                        vel=vel,
                    )
                )
                break
        else:
            return None  # placement failed; caller redraws everything
    return draws


def _camera_at(cfg: GeneratorConfig, params: dict, tau: float) -> CameraPose:
    az = params["az0"] + params["daz"] * tau
    r = params["r0"] + params["dr"] * tau
    h = params["h0"] + params["dh"] * tau
    eye = np.array([r * np.cos(az), r * np.sin(az), h])
    half = cfg.resolution / 2.0
    return look_at_camera(
        eye,
        np.asarray(cfg.look_at),
        fx=cfg.fx,
        fy=cfg.fx,
        cx=half,
        cy=half,
        width=cfg.resolution,
        height=cfg.resolution,
    )


def _boxes_at(draws: list[_ObjectDraw], tau: float) -> list[Box3D]:
    boxes = []
    for k, d in enumerate(draws):
        pos = d.pos0 + d.vel * tau
        center = np.array([pos[0], pos[1], d.size[2] / 2.0])
        boxes.append(
            Box3D(
                center=center,
                size=d.size.copy(),
                rotation=_yaw_quat(d.yaw),
                class_label=d.shape,
                instance_id=k + 1,
            )
        )
    return boxes


def generate_video(config: GeneratorConfig, seed: int, name: str | None = None) -> SyntheticVideo:
    """Render one synthetic clip with full ground truth; deterministic per seed."""
    config.validate()
    for attempt in range(config.max_attempts):
        rng = np.random.default_rng([seed, attempt, 0x5CEE])
        draws = _draw_objects(config, rng)
        if draws is None:
            continue
        cam_params = {
            "az0": rng.uniform(0, 2 * np.pi),
            "daz": np.deg2rad(rng.uniform(*config.azimuth_span_deg)) * (1 if rng.uniform() < 0.5 else -1),
            "r0": rng.uniform(*config.orbit_radius),
            "dr": rng.uniform(-0.6, 0.6),
            "h0": rng.uniform(*config.orbit_height),
            "dh": rng.uniform(-0.4, 0.4),
        }
        meshes = {PLANE_ID: _plane_mesh(config.plane_half, config.plane_grid, rng)}
        for k, d in enumerate(draws):
            if d.shape == "cube":
                meshes[k + 1] = _cube_mesh(d.size, d.color)
            elif d.shape == "sphere":
                meshes[k + 1] = _sphere_mesh(d.size[0], d.color)
            else:
                meshes[k + 1] = _cone_mesh(d.size[0], d.color)

        video = _render_video(config, seed, name, draws, cam_params, meshes)
        if _constraints_ok(config, video):
            return video
    raise BadConfig(f"could not satisfy generation constraints after {config.max_attempts} attempts")


def _render_video(cfg, seed, name, draws, cam_params, meshes) -> SyntheticVideo:
    n, res = cfg.frames, cfg.resolution
    frames = np.empty((n, res, res, 3), dtype=np.uint8)
    masks = np.zeros((n, res, res), dtype=np.int32)
    depths = np.empty((n, res, res), dtype=np.float32)
    cameras, boxes = [], []
    video = SyntheticVideo(
        name=name or f"video_seed{seed}",
        seed=seed,
        config=asdict(cfg),
        frames_u8=frames,
        cameras=cameras,
        boxes=boxes,
        masks=masks,
        depths=depths,
        classes=sorted({d.shape for d in draws}),
        _object_meshes=meshes,
    )
    for i in range(n):
        tau = i / (n - 1)
        cameras.append(_camera_at(cfg, cam_params, tau))
        boxes.append(_boxes_at(draws, tau))
        out = rasterize(video.scene_at(i))
        frames[i] = imageio.img_to_u8(out.rgb)
        obj = (out.index > 0) & (out.index != PLANE_ID)
        masks[i] = np.where(obj, out.index, 0)
        depths[i] = out.depth.astype(np.float32)
    return video


def _constraints_ok(cfg: GeneratorConfig, video: SyntheticVideo) -> bool:
    cam0 = video.cameras[0]
    camN = video.cameras[-1]
    if np.max(np.abs(cam0.world_to_camera - camN.world_to_camera)) < 1e-3:
        return False
    if not video.boxes[0]:
        return True  # background-only clip: only the camera constraint applies
    # at least one object with >= min_motion_px of projected motion under the
    # frame-0 camera (motion not explained by the orbit)
    moved = False
    for b0, bN in zip(video.boxes[0], video.boxes[-1]):
        uv0, _ = project_points(b0.center[None], cam0)
        uvN, _ = project_points(bN.center[None], cam0)
        if np.linalg.norm(uvN - uv0) >= cfg.min_motion_px:
            moved = True
            break
    if not moved:
        return False
    for i in video.source_indices():
        for b in video.boxes[i]:
            m = video.masks[i] == b.instance_id
            if m.sum() < cfg.min_mask_area:
                return False
            if _silhouette_iou(m) < cfg.min_silhouette_iou:
                return False
    return True


# --- corpus persistence ------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def save_video(video: SyntheticVideo, root) -> Path:
    vdir = imageio.ensure_dir(Path(root) / video.name)
    for sub in ("frames", "masks", "depth"):
        imageio.ensure_dir(vdir / sub)
    for i in range(video.n_frames):
        imageio.save_frame_png(vdir / "frames" / f"{i:03d}.png", video.frames_u8[i])
        imageio.save_mask_png(vdir / "masks" / f"{i:03d}.png", video.masks[i])
        imageio.save_depth(vdir / "depth" / f"{i:03d}.npy", video.depths[i])
    (vdir / "cameras.json").write_text(
        json.dumps([c.to_dict() for c in video.cameras], indent=1)
    )
    (vdir / "boxes.json").write_text(
        json.dumps(
            {
                "seed": video.seed,
                "config": video.config,
                "classes": video.classes,
                "boxes": [[b.to_dict() for b in frame] for frame in video.boxes],
            },
            indent=1,
        )
    )
    return vdir


def load_video(vdir, expected_hashes: dict | None = None) -> SyntheticVideo:
    vdir = Path(vdir)
    if expected_hashes:
        for rel, want in expected_hashes.items():
            p = vdir / rel
            if not p.exists() or _sha256(p) != want:
                raise HashMismatch(f"{vdir.name}/{rel} does not match its manifest hash")
    meta = json.loads((vdir / "boxes.json").read_text())
    cameras = [CameraPose.from_dict(d) for d in json.loads((vdir / "cameras.json").read_text())]
    n = len(cameras)
    frames, masks, depths = [], [], []
    for i in range(n):
        frames.append(imageio.img_to_u8(imageio.load_frame_png(vdir / "frames" / f"{i:03d}.png")))
        masks.append(imageio.load_mask_png(vdir / "masks" / f"{i:03d}.png"))
        depths.append(imageio.load_depth(vdir / "depth" / f"{i:03d}.npy"))
    return SyntheticVideo(
        name=vdir.name,
        seed=int(meta["seed"]),
        config=dict(meta["config"]),
        frames_u8=np.stack(frames),
        cameras=cameras,
        boxes=[[Box3D.from_dict(d) for d in frame] for frame in meta["boxes"]],
        masks=np.stack(masks),
        depths=np.stack(depths),
        classes=list(meta["classes"]),
    )


def dataset_manifest(root, video_dirs: list[Path]) -> Path:
    """Write manifest.json with per-file content hashes for each video dir."""
    root = Path(root)
    entries = []
    for vdir in video_dirs:
        files = {}
        for p in sorted(vdir.rglob("*")):
            if p.is_file():
                files[str(p.relative_to(vdir))] = _sha256(p)
        entries.append({"name": vdir.name, "files": files})
    manifest = {"version": 1, "videos": entries}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def generate_corpus(config: GeneratorConfig, root, n_videos: int, seed: int) -> Path:
    """Generate, save, and manifest a corpus; returns the corpus root."""
    root = imageio.ensure_dir(root)
    dirs = []
    for i in range(n_videos):
        video = generate_video(config, seed=seed + i, name=f"video_{i:03d}")
        dirs.append(save_video(video, root))
    dataset_manifest(root, dirs)
    return root


def load_corpus(root, validate: bool = True) -> list[SyntheticVideo]:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    videos = []
    for entry in manifest["videos"]:
        hashes = entry["files"] if validate else None
        videos.append(load_video(root / entry["name"], expected_hashes=hashes))
    return videos
