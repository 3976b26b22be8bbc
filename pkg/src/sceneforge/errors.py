"""Exception types shared across the pipeline."""


class SceneforgeError(Exception):
    """Base class for all package errors."""


class BehindCamera(SceneforgeError):
    """Point or box center has non-positive camera-frame depth."""


class NonPositiveDepth(SceneforgeError):
    """Back-projection requires depth > 0."""


class TooFewPixels(SceneforgeError):
    """Not enough valid masked pixels for a robust statistic."""


class EmptyMesh(SceneforgeError):
    """Lifting produced no surviving triangles."""


class UnknownInstance(SceneforgeError):
    """Edit references an instance id absent from the scene."""


class InvalidValue(SceneforgeError):
    """Edit parameter out of its valid domain."""


class UnsupportedAttribute(SceneforgeError):
    """SetAttribute key outside the supported set."""


class BadShape(SceneforgeError):
    """Array shape violates an interface contract."""


class ShapeMismatch(SceneforgeError):
    """Two inputs that must agree in shape do not."""


class StepOutOfRange(SceneforgeError):
    """Diffusion timestep outside the schedule."""


class UntrainedModel(SceneforgeError):
    """Checkpoint is flagged untrained and cannot sample."""


class TooShortVideo(SceneforgeError):
    """Frame-pair sampling needs at least two annotated frames."""


class BadConfig(SceneforgeError):
    """Generator or trainer configuration is invalid."""


class HashMismatch(SceneforgeError):
    """Stored content does not match its manifest hash."""


class TooSmallProjection(SceneforgeError):
    """Box projects to less than the minimum crop size."""


class TooFewSamples(SceneforgeError):
    """Distribution metric needs a minimum sample count."""


class CheckpointError(SceneforgeError):
    """Checkpoint missing, wrong version, or inconsistent with its codec."""


class UnknownScene(SceneforgeError):
    """Scene id not present in the store."""


class EditConflict(SceneforgeError):
    """Optimistic-concurrency precondition failed."""
