"""Editable scene graph and the declarative edit-script language.

Scenes are immutable values: every edit returns a new ``SceneGraph`` sharing
the untouched entities, which keeps undo and replay trivial. Edit scripts
serialize to a versioned JSON schema (``schema_version`` 1); ops use plain
JSON fields, bulky arrays (meshes, background images) are embedded as
base64-encoded ``.npy`` payloads so round trips are field-exact.
"""

from __future__ import annotations

import base64
import io as _io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .entities import LiftedEntity, Mesh
from .errors import InvalidValue, UnknownInstance, UnsupportedAttribute
from .geometry import Box3D, CameraPose, quat_multiply, quat_normalize, quat_to_matrix

SCHEMA_VERSION = 1

_IDENTITY_QUAT = (1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SceneGraph:
    entities: dict  # instance_id -> LiftedEntity
    poses: dict  # instance_id -> Box3D (current pose)
    camera: CameraPose
    background: np.ndarray | None = None  # (H, W, 3) float32 or None

    def __post_init__(self):
        if set(self.entities) != set(self.poses):
            raise InvalidValue("entities and poses must share key sets")
        object.__setattr__(self, "entities", dict(self.entities))
        object.__setattr__(self, "poses", dict(self.poses))

    def ids(self) -> list[int]:
        return sorted(self.entities)


# --- edit operations ------------------------------------------------------


@dataclass(frozen=True)
class Translate:
    instance_id: int
    t: np.ndarray


@dataclass(frozen=True)
class Rotate:
    instance_id: int
    quaternion: np.ndarray  # [w, x, y, z], unit
    pivot: object = "center"  # "center" or a world-space 3-vector


@dataclass(frozen=True)
class Scale:
    instance_id: int
    factor: np.ndarray  # per-axis, in the box local frame


@dataclass(frozen=True)
class Remove:
    instance_id: int


@dataclass(frozen=True)
class Duplicate:
    instance_id: int
    new_id: int
    t: np.ndarray


@dataclass(frozen=True)
class Insert:
    entity: LiftedEntity
    pose: Box3D


@dataclass(frozen=True)
class Replace:
    instance_id: int
    entity: LiftedEntity


@dataclass(frozen=True)
class SetCamera:
    camera: CameraPose


@dataclass(frozen=True)
class SetBackground:
    image: np.ndarray | None


@dataclass(frozen=True)
class SetAttribute:
    instance_id: int
    key: str
    value: object


EditOp = (
    Translate
    | Rotate
    | Scale
    | Remove
    | Duplicate
    | Insert
    | Replace
    | SetCamera
    | SetBackground
    | SetAttribute
)


@dataclass(frozen=True)
class EditScript:
    ops: tuple
    metadata: dict = field(default_factory=dict)


class ScriptError(Exception):
    """First failing op of a script, with its index; the scene is unchanged."""

    def __init__(self, op_index: int, cause: Exception):
        self.op_index = op_index
        self.cause = cause
        super().__init__(f"op {op_index} failed: {cause}")


def _require(scene: SceneGraph, instance_id: int) -> None:
    if instance_id not in scene.entities:
        raise UnknownInstance(f"instance {instance_id} not in scene")


def _rigid_pose(pose: Box3D, R: np.ndarray, pivot: np.ndarray, q_delta) -> Box3D:
    center = R @ (pose.center - pivot) + pivot
    rotation = quat_normalize(quat_multiply(q_delta, pose.rotation))
    return replace(pose, center=center, rotation=rotation)


def apply_edit(scene: SceneGraph, op: EditOp) -> SceneGraph:
    """Apply one edit, returning a new scene; the input is never modified.

    The pose box tracks the mesh under every rigid op; Scale acts per-axis in
    the box's local frame so box corners keep following mesh vertices.
    """
    if isinstance(op, Translate):
        _require(scene, op.instance_id)
        t = np.asarray(op.t, dtype=np.float64)
        if t.shape != (3,):
            raise InvalidValue("translation must be a 3-vector")
        ent = scene.entities[op.instance_id]
        pose = scene.poses[op.instance_id]
        entities = dict(scene.entities)
        poses = dict(scene.poses)
        entities[op.instance_id] = ent.with_mesh(ent.mesh.transformed(lambda v: v + t))
        poses[op.instance_id] = replace(pose, center=pose.center + t)
        return replace(scene, entities=entities, poses=poses)

    if isinstance(op, Rotate):
        _require(scene, op.instance_id)
        q = np.asarray(op.quaternion, dtype=np.float64)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise InvalidValue("rotation quaternion must be unit")
        if tuple(q) == _IDENTITY_QUAT:  # no-op fast path keeps arrays bit-identical
            return replace(scene, entities=dict(scene.entities), poses=dict(scene.poses))
        pose = scene.poses[op.instance_id]
        pivot = (
            pose.center
            if isinstance(op.pivot, str) and op.pivot == "center"
            else np.asarray(op.pivot, dtype=np.float64)
        )
        R = quat_to_matrix(q)
        ent = scene.entities[op.instance_id]
        entities = dict(scene.entities)
        poses = dict(scene.poses)
        entities[op.instance_id] = ent.with_mesh(
            ent.mesh.transformed(lambda v: (v - pivot) @ R.T + pivot)
        )
        poses[op.instance_id] = _rigid_pose(pose, R, pivot, q)
        return replace(scene, entities=entities, poses=poses)

    if isinstance(op, Scale):
        _require(scene, op.instance_id)
        s = np.asarray(op.factor, dtype=np.float64)
        if s.shape != (3,) or not np.all(s > 0):
            raise InvalidValue("scale factors must be positive")
        pose = scene.poses[op.instance_id]
        Rb = quat_to_matrix(pose.rotation)
        c = pose.center
        ent = scene.entities[op.instance_id]
        entities = dict(scene.entities)
        poses = dict(scene.poses)
        entities[op.instance_id] = ent.with_mesh(
            ent.mesh.transformed(lambda v: ((v - c) @ Rb * s) @ Rb.T + c)
        )
        poses[op.instance_id] = replace(pose, size=pose.size * s)
        return replace(scene, entities=entities, poses=poses)

    if isinstance(op, Remove):
        _require(scene, op.instance_id)
        entities = dict(scene.entities)
        poses = dict(scene.poses)
        del entities[op.instance_id]
        del poses[op.instance_id]
        return replace(scene, entities=entities, poses=poses)

    if isinstance(op, Duplicate):
        _require(scene, op.instance_id)
        if op.new_id in scene.entities:
            raise InvalidValue(f"duplicate target id {op.new_id} already exists")
        if op.new_id <= 0:
            raise InvalidValue("instance ids must be positive")
        t = np.asarray(op.t, dtype=np.float64)
        src_ent = scene.entities[op.instance_id]
        src_pose = scene.poses[op.instance_id]
        new_ent = LiftedEntity(
            instance_id=op.new_id,
            class_label=src_ent.class_label,
            mesh=src_ent.mesh.transformed(lambda v: v + t),
            source_box=src_ent.source_box,
            provenance=src_ent.provenance,
        )
        entities = dict(scene.entities)
        poses = dict(scene.poses)
        entities[op.new_id] = new_ent
        poses[op.new_id] = replace(
            src_pose, center=src_pose.center + t, instance_id=op.new_id
        )
        return replace(scene, entities=entities, poses=poses)

    if isinstance(op, Insert):
        iid = op.entity.instance_id
        if iid in scene.entities:
            raise InvalidValue(f"insert id {iid} already exists")
        if iid != op.pose.instance_id:
            raise InvalidValue("entity and pose must agree on instance_id")
        entities = dict(scene.entities)
        poses = dict(scene.poses)
        entities[iid] = op.entity
        poses[iid] = op.pose
        return replace(scene, entities=entities, poses=poses)

    if isinstance(op, Replace):
        _require(scene, op.instance_id)
        pose = scene.poses[op.instance_id]
        # Align the replacement mesh so it occupies the existing pose box.
        src_box = op.entity.source_box
        R_from = quat_to_matrix(src_box.rotation)
        R_to = quat_to_matrix(pose.rotation)
        s = pose.size / src_box.size

        def _align(v, R_from=R_from, R_to=R_to, s=s, c_from=src_box.center, c_to=pose.center):
            local = (v - c_from) @ R_from
            return (local * s) @ R_to.T + c_to

        new_ent = LiftedEntity(
            instance_id=op.instance_id,
            class_label=op.entity.class_label,
            mesh=op.entity.mesh.transformed(_align),
            source_box=op.entity.source_box,
            provenance=op.entity.provenance,
        )
        entities = dict(scene.entities)
        entities[op.instance_id] = new_ent
        return replace(scene, entities=entities, poses=dict(scene.poses))

    if isinstance(op, SetCamera):
        return replace(scene, camera=op.camera)

    if isinstance(op, SetBackground):
        img = op.image
        if img is not None:
            img = np.asarray(img, dtype=np.float32)
            if img.ndim != 3 or img.shape[2] != 3:
                raise InvalidValue("background must be (H, W, 3)")
        return replace(scene, background=img)

    if isinstance(op, SetAttribute):
        _require(scene, op.instance_id)
        if op.key != "color":
            raise UnsupportedAttribute(f"attribute {op.key!r} not supported")
        color = np.asarray(op.value, dtype=np.float32)
        if color.shape != (3,):
            raise InvalidValue("color must be a 3-vector")
        ent = scene.entities[op.instance_id]
        mesh = Mesh(
            vertices=ent.mesh.vertices,
            colors=np.broadcast_to(color, ent.mesh.colors.shape).copy(),
            faces=ent.mesh.faces,
        )
        entities = dict(scene.entities)
        entities[op.instance_id] = ent.with_mesh(mesh)
        return replace(scene, entities=entities, poses=dict(scene.poses))

    raise InvalidValue(f"unknown edit op {type(op).__name__}")


def apply_script(scene: SceneGraph, script: EditScript) -> SceneGraph:
    """Apply ops in order. On failure raises ScriptError with the op index;
    since edits are pure the caller's scene is untouched either way."""
    out = scene
    for i, op in enumerate(script.ops):
        try:
            out = apply_edit(out, op)
        except Exception as exc:
            raise ScriptError(i, exc) from exc
    return out


def diff_boxes(src: SceneGraph, tgt: SceneGraph):
    """Aligned per-id pose lists over the union of instance ids.

    Returns (ids, src_boxes, tgt_boxes); a box is None where the id is
    absent from that scene. Order is ascending id.
    """
    ids = sorted(set(src.poses) | set(tgt.poses))
    return (
        ids,
        [src.poses.get(i) for i in ids],
        [tgt.poses.get(i) for i in ids],
    )


# --- JSON serialization ----------------------------------------------------


def _enc_array(a: np.ndarray) -> str:
    buf = _io.BytesIO()
    np.save(buf, np.ascontiguousarray(a), allow_pickle=False)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _dec_array(s: str) -> np.ndarray:
    return np.load(_io.BytesIO(base64.b64decode(s)), allow_pickle=False)


def _entity_to_dict(e: LiftedEntity) -> dict:
    return {
        "instance_id": e.instance_id,
        "class_label": e.class_label,
        "mesh": {
            "vertices": _enc_array(e.mesh.vertices),
            "colors": _enc_array(e.mesh.colors),
            "faces": _enc_array(e.mesh.faces),
        },
        "source_box": e.source_box.to_dict(),
        "provenance": e.provenance,
    }


def _entity_from_dict(d: dict) -> LiftedEntity:
    return LiftedEntity(
        instance_id=int(d["instance_id"]),
        class_label=str(d["class_label"]),
        mesh=Mesh(
            vertices=_dec_array(d["mesh"]["vertices"]),
            colors=_dec_array(d["mesh"]["colors"]),
            faces=_dec_array(d["mesh"]["faces"]),
        ),
        source_box=Box3D.from_dict(d["source_box"]),
        provenance=dict(d.get("provenance", {})),
    )


def op_to_dict(op: EditOp) -> dict:
    if isinstance(op, Translate):
        return {"op": "translate", "id": op.instance_id, "t": [float(x) for x in op.t]}
    if isinstance(op, Rotate):
        pivot = op.pivot if isinstance(op.pivot, str) else [float(x) for x in op.pivot]
        return {
            "op": "rotate",
            "id": op.instance_id,
            "q": [float(x) for x in op.quaternion],
            "pivot": pivot,
        }
    if isinstance(op, Scale):
        return {"op": "scale", "id": op.instance_id, "factor": [float(x) for x in op.factor]}
    if isinstance(op, Remove):
        return {"op": "remove", "id": op.instance_id}
    if isinstance(op, Duplicate):
        return {
            "op": "duplicate",
            "id": op.instance_id,
            "new_id": op.new_id,
            "t": [float(x) for x in op.t],
        }
    if isinstance(op, Insert):
        return {"op": "insert", "entity": _entity_to_dict(op.entity), "pose": op.pose.to_dict()}
    if isinstance(op, Replace):
        return {"op": "replace", "id": op.instance_id, "entity": _entity_to_dict(op.entity)}
    if isinstance(op, SetCamera):
        return {"op": "set_camera", "camera": op.camera.to_dict()}
    if isinstance(op, SetBackground):
        return {
            "op": "set_background",
            "image": None if op.image is None else _enc_array(op.image),
        }
    if isinstance(op, SetAttribute):
        value = op.value
        if isinstance(value, np.ndarray):
            value = [float(x) for x in value]
        return {"op": "set_attribute", "id": op.instance_id, "key": op.key, "value": value}
    raise InvalidValue(f"unknown edit op {type(op).__name__}")


def op_from_dict(d: dict) -> EditOp:
    kind = d.get("op")
    if kind == "translate":
        return Translate(int(d["id"]), np.asarray(d["t"], dtype=np.float64))
    if kind == "rotate":
        pivot = d.get("pivot", "center")
        if not isinstance(pivot, str):
            pivot = np.asarray(pivot, dtype=np.float64)
        return Rotate(int(d["id"]), np.asarray(d["q"], dtype=np.float64), pivot)
    if kind == "scale":
        return Scale(int(d["id"]), np.asarray(d["factor"], dtype=np.float64))
    if kind == "remove":
        return Remove(int(d["id"]))
    if kind == "duplicate":
        return Duplicate(int(d["id"]), int(d["new_id"]), np.asarray(d["t"], dtype=np.float64))
    if kind == "insert":
        return Insert(_entity_from_dict(d["entity"]), Box3D.from_dict(d["pose"]))
    if kind == "replace":
        return Replace(int(d["id"]), _entity_from_dict(d["entity"]))
    if kind == "set_camera":
        return SetCamera(CameraPose.from_dict(d["camera"]))
    if kind == "set_background":
        img = d.get("image")
        return SetBackground(None if img is None else _dec_array(img))
    if kind == "set_attribute":
        return SetAttribute(int(d["id"]), str(d["key"]), d["value"])
    raise InvalidValue(f"unknown op kind {kind!r}")


def script_to_json(script: EditScript) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "metadata": script.metadata,
        "ops": [op_to_dict(op) for op in script.ops],
    }
    return json.dumps(doc, indent=2)


def script_from_json(text: str) -> EditScript:
    doc = json.loads(text)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InvalidValue(f"unsupported schema_version {version!r}")
    ops = tuple(op_from_dict(d) for d in doc.get("ops", []))
    return EditScript(ops=ops, metadata=dict(doc.get("metadata", {})))
