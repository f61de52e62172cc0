class ExporterError(Exception):
    pass


class EncoderLoadError(ExporterError):
    pass


class AlignmentError(ExporterError):
    """A whitespace token could not be mapped to at least one subword."""

    def __init__(self, utterance_index: int, token: str, message: str = ""):
        detail = f": {message}" if message else ""
        super().__init__(
            f"utterance {utterance_index}: token {token!r} maps to no subwords{detail}"
        )
        self.utterance_index = utterance_index
        self.token = token
