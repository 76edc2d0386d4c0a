"""Exception types shared across the package."""


class VLNSimError(Exception):
    pass


class InvalidGraph(VLNSimError):
    pass


class NoPath(VLNSimError):
    pass


class SamplingExhausted(VLNSimError):
    pass


class MapFormatError(VLNSimError):
    pass


class InvalidOrigin(VLNSimError):
    pass


class InvalidMeasure(VLNSimError):
    pass


class OracleScaleExceeded(VLNSimError):
    pass


class InvalidMap(VLNSimError):
    pass


class InvalidPose(VLNSimError):
    pass


class InvalidThresholds(VLNSimError):
    pass


class EmptyBatch(VLNSimError):
    pass


class DatasetFormatError(VLNSimError):
    def __init__(self, message, index=None):
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)
        self.index = index


class InvalidEpisode(VLNSimError):
    pass


class ProtocolError(VLNSimError):
    pass


class BridgeTimeout(VLNSimError):
    pass


class DegenerateWeights(RuntimeWarning):
    """All particle weights vanished; the filter fell back to uniform weights."""
