"""Mesh and lifted-entity value types shared by the scene, renderer, and lifting stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidValue
from .geometry import Box3D


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh with per-vertex color. Vertices are world-space."""

    vertices: np.ndarray  # (V, 3) float64
    colors: np.ndarray  # (V, 3) float32 in [0, 1]
    faces: np.ndarray  # (T, 3) int32

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        c = np.ascontiguousarray(self.colors, dtype=np.float32)
        f = np.ascontiguousarray(self.faces, dtype=np.int32)
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvalidValue("vertices must be (V, 3)")
        if c.shape != v.shape:
            raise InvalidValue("colors must match vertices")
        if f.ndim != 2 or f.shape[1] != 3:
            raise InvalidValue("faces must be (T, 3)")
        if len(v) == 0 or len(f) == 0:
            raise InvalidValue("mesh must be nonempty")
        if f.min() < 0 or f.max() >= len(v):
            raise InvalidValue("face indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "colors", c)
        object.__setattr__(self, "faces", f)

    def transformed(self, fn) -> "Mesh":
        """New mesh with vertices mapped through ``fn`` ((V,3) -> (V,3))."""
        return Mesh(vertices=fn(self.vertices), colors=self.colors, faces=self.faces)


@dataclass(frozen=True)
class LiftedEntity:
    """A scene object: mesh geometry plus the 3D box it was lifted with."""

    instance_id: int
    class_label: str
    mesh: Mesh
    source_box: Box3D
    provenance: dict = field(default_factory=dict)

    def with_mesh(self, mesh: Mesh) -> "LiftedEntity":
        return LiftedEntity(
            instance_id=self.instance_id,
            class_label=self.class_label,
            mesh=mesh,
            source_box=self.source_box,
            provenance=self.provenance,
        )
