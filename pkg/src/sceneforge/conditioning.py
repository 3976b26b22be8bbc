"""Per-stream conditioning: the 15-channel input stack and object tokens.

Channel layout (single source of truth, consumed by the compositor and the
tests):

    [0:4)   image-or-noise latent (codec space)
    [4:8)   codec latent of the stream's coarse render
    [8]     instance-presence mask at latent resolution
    [9:15)  Plücker ray map of the stream camera in the reference frame,
            ordered (direction, moment)

Tokens carry one slot per object plus padding: each real slot is the sum of
a learned class embedding and an MLP encoding of the box corners projected
to (x, y, depth); empty slots hold a learned null token, which is also what
the unconditional branch uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ShapeMismatch
from .geometry import Box3D, CameraPose, plucker_map, project_box_corners

CH_LATENT = slice(0, 4)
CH_RENDER = slice(4, 8)
CH_MASK = 8
CH_PLUCKER = slice(9, 15)
N_CHANNELS = 15

PE_FREQUENCIES = 8
BOX_FEATURE_DIM = 8 * 3 * (2 * PE_FREQUENCIES) + 8  # corners x scalars x (sin,cos) + flags
TOKEN_DIM = 256
DOWNSAMPLE = 8


def corner_positional_encoding(
    box: Box3D, cam: CameraPose, scene_diameter: float
) -> np.ndarray:
    """Sinusoidal encoding of the 8 projected corners, plus behind flags.

    Corner (x, y) are normalized by the image size, depth by the scene
    diameter; each scalar expands into PE_FREQUENCIES (sin, cos) pairs at
    powers-of-two frequencies. Behind-camera corners keep their computed
    values and set their flag bit. Output is float32 of BOX_FEATURE_DIM.
    """
    corners, behind = project_box_corners(box, cam)
    scaled = np.empty_like(corners)
    scaled[:, 0] = corners[:, 0] / cam.width
    scaled[:, 1] = corners[:, 1] / cam.height
    scaled[:, 2] = corners[:, 2] / scene_diameter
    freqs = (2.0 ** np.arange(PE_FREQUENCIES)) * np.pi
    ang = scaled[:, :, None] * freqs[None, None, :]  # (8, 3, F)
    enc = np.stack([np.sin(ang), np.cos(ang)], axis=-1).reshape(-1)
    return np.concatenate([enc, behind.astype(np.float64)]).astype(np.float32)


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length token slots for one stream.

    class_ids/box_features are meaningful where ``null_mask`` is False;
    null slots are filled with the model's learned null token downstream.
    """

    class_ids: torch.Tensor  # (L,) long
    box_features: torch.Tensor  # (L, BOX_FEATURE_DIM) float32
    null_mask: torch.Tensor  # (L,) bool

    def __len__(self) -> int:
        return len(self.class_ids)


@dataclass(frozen=True)
class StreamConditioning:
    channels: torch.Tensor  # (15, h, w) float32
    tokens: TokenSequence


class ClassVocabulary:
    """Maps class labels to embedding rows; unknown labels share row 0."""

    def __init__(self, classes):
        self.classes = sorted(set(classes))
        self._index = {c: i + 1 for i, c in enumerate(self.classes)}

    @property
    def size(self) -> int:
        return len(self.classes) + 1

    def id_of(self, label: str) -> int:
        return self._index.get(label, 0)

    def to_config(self) -> list:
        return list(self.classes)


def downsample_mask_nearest(index: np.ndarray, res) -> np.ndarray:
    """Presence mask (index != 0) at latent resolution by nearest sampling."""
    h, w = res
    H, W = index.shape
    rows = (np.floor((np.arange(h) + 0.5) * (H / h))).astype(int)
    cols = (np.floor((np.arange(w) + 0.5) * (W / w))).astype(int)
    return (index[np.ix_(rows, cols)] != 0).astype(np.float32)


def build_tokens(
    boxes,
    cam: CameraPose,
    vocab: ClassVocabulary,
    scene_diameter: float,
    max_objects: int,
) -> TokenSequence:
    """Id-sorted object tokens padded with null slots to max_objects + 1.

    The extra slot guarantees at least one null token in every sequence (the
    learned "no object" anchor the unconditional branch relies on).
    """
    boxes = sorted((b for b in boxes if b is not None), key=lambda b: b.instance_id)
    if len(boxes) > max_objects:
        raise ShapeMismatch(f"{len(boxes)} objects exceed the {max_objects}-slot budget")
    L = max_objects + 1
    class_ids = torch.zeros(L, dtype=torch.long)
    feats = torch.zeros(L, BOX_FEATURE_DIM, dtype=torch.float32)
    null = torch.ones(L, dtype=torch.bool)
    for i, b in enumerate(boxes):
        class_ids[i] = vocab.id_of(b.class_label)
        feats[i] = torch.from_numpy(corner_positional_encoding(b, cam, scene_diameter))
        null[i] = False
    return TokenSequence(class_ids=class_ids, box_features=feats, null_mask=null)


def build_stream(
    image_or_noise_latent: torch.Tensor,
    render,
    cam: CameraPose,
    reference_cam: CameraPose,
    boxes,
    codec,
    vocab: ClassVocabulary,
    scene_diameter: float,
    max_objects: int = 8,
) -> StreamConditioning:
    """Assemble one stream's 15-channel stack and token sequence."""
    h, w = cam.height // DOWNSAMPLE, cam.width // DOWNSAMPLE
    lat = torch.as_tensor(image_or_noise_latent, dtype=torch.float32)
    if lat.shape != (4, h, w):
        raise ShapeMismatch(f"latent shape {tuple(lat.shape)} != (4, {h}, {w})")
    if render.rgb.shape[:2] != (cam.height, cam.width):
        raise ShapeMismatch("render resolution does not match the camera")

    channels = torch.zeros(N_CHANNELS, h, w, dtype=torch.float32)
    channels[CH_LATENT] = lat
    channels[CH_RENDER] = codec.encode(render.rgb).data
    channels[CH_MASK] = torch.from_numpy(downsample_mask_nearest(render.index, (h, w)))
    pm = plucker_map(cam, reference_cam, (h, w))
    channels[CH_PLUCKER] = torch.from_numpy(pm.channels.astype(np.float32))
    tokens = build_tokens(boxes, cam, vocab, scene_diameter, max_objects)
    return StreamConditioning(channels=channels, tokens=tokens)
