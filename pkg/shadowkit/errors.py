"""Structured errors raised across shadowkit.

Every error carries a short machine-readable ``code`` plus free-form details so
the CLI can print it as a single ``key=value`` line.
"""


class ShadowKitError(Exception):
    """Base class for all shadowkit errors."""
    code = 'shadowkit_error'

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def one_line(self) -> str:
        """Render as ``error code=... message="..." k=v`` on a single line."""
        text = self.message.replace('"', "'").replace('\n', ' ')
        parts = [f'error code={self.code}', f'message="{text}"']
        for key, value in self.details.items():
            parts.append(f'{key}={value}')
        return ' '.join(parts)


class ShapeError(ShadowKitError, ValueError):
    """Tensor extents do not line up; ``axis`` names the offending one."""
    code = 'shape_mismatch'

    def __init__(self, message: str, axis: str, expected=None, got=None):
        super().__init__(message, axis=axis, expected=expected, got=got)
        self.axis = axis


class ConfigError(ShadowKitError, ValueError):
    code = 'config_invalid'


class ModelFormatError(ShadowKitError):
    """Model file has the wrong magic, an unknown version, or is truncated."""
    code = 'model_format'


class TrainingDivergedError(ShadowKitError):
    code = 'training_diverged'

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f'non-finite loss {loss} at epoch {epoch}, batch {batch}',
                         epoch=epoch, batch=batch)
        self.epoch = epoch
        self.batch = batch


class DegenerateSceneError(ShadowKitError, ValueError):
    code = 'degenerate_scene'


class NonFiniteSystemError(ShadowKitError, ValueError):
    code = 'non_finite_system'


class SolverError(ShadowKitError):
    code = 'solver_failed'


class DatasetError(ShadowKitError):
    code = 'dataset_invalid'
