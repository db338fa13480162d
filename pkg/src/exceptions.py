class CSTError(Exception):
    """Base exception for the cascaded structure tensor pipeline."""

    pass


class ConfigError(CSTError):
    """Raised when there is a configuration error."""

    pass


class InvalidInputError(CSTError):
    """Raised when an image, box, grid or numeric argument is out of range."""

    pass


class ModelFormatError(CSTError):
    """Raised when a classifier file has a bad header or an unsupported version."""

    pass


class TrainingError(CSTError):
    """Raised when the baseline classifier cannot be trained on the given data."""

    pass


class ManifestError(CSTError):
    """Raised when a dataset manifest cannot be read or is inconsistent."""

    pass


class SceneSpecError(CSTError):
    """Raised when a synthetic scene specification cannot be satisfied."""

    pass
