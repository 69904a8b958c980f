"""Exception types shared across the package."""


class MBNetError(Exception):
    """Base class for all package errors."""


class ConfigError(MBNetError, ValueError):
    """Invalid configuration value or unknown/missing config key."""


class ShapeError(MBNetError, ValueError):
    """Tensor shape violates an operation's contract."""


class DegenerateInputError(MBNetError, ValueError):
    """Input too small for the requested computation (e.g. SSIM window)."""


class IndexingError(MBNetError, RuntimeError):
    """Dataset directory is inconsistent (e.g. scene without a depth map)."""


class PairingError(MBNetError, RuntimeError):
    """Prediction/ground-truth directories do not contain matching files."""


class ImageIOError(MBNetError, OSError):
    """Unreadable or corrupt image file."""


class CorruptionError(MBNetError, RuntimeError):
    """Checkpoint archive is inconsistent with its manifest."""


class DivergenceError(MBNetError, RuntimeError):
    """Training produced a non-finite loss."""
