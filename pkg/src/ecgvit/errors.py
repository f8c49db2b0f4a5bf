"""Exception hierarchy.

``InputError`` subclasses map to CLI exit code 2, everything else under
``EcgVitError`` to exit code 1.
"""


class EcgVitError(Exception):
    pass


class InputError(EcgVitError):
    """Bad user input: files, manifests, configs, parameters."""


class IngestionError(InputError):
    pass


class ParameterError(InputError, ValueError):
    pass


class DimensionError(InputError, ValueError):
    pass


class CheckpointError(InputError):
    pass


class ProtocolError(InputError):
    """Cross-validation protocol violated (e.g. fewer than two subjects)."""


class ContractError(EcgVitError):
    pass


class NonFiniteError(EcgVitError, FloatingPointError):
    pass


class TrainingError(EcgVitError):
    pass


class MetricsError(EcgVitError, ValueError):
    pass
