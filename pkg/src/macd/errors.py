"""Engine error taxonomy.

Every failure the engine can signal maps to one of these classes so the
CLI can translate them into stable exit codes (config=2, input=3,
backend=4) and tests can assert on the precise failure mode.
"""


class MacdError(Exception):
    """Base class for all engine errors."""


class ConfigError(MacdError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class InputError(MacdError):
    """Malformed or missing input data (CLI exit code 3)."""


class BackendError(MacdError):
    """Model backend failure (CLI exit code 4)."""


# --- tensor I/O -----------------------------------------------------------

class MalformedHeader(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class ValueOutOfRange(InputError):
    pass


# --- detections / tracking ------------------------------------------------

class MalformedRecord(InputError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class FrameOutOfRange(InputError):
    pass


# --- composition / decoding -----------------------------------------------

class LengthMismatch(InputError):
    pass


class VocabMismatch(InputError):
    pass


class EmptyQuery(InputError):
    pass


class NonDifferentiableConfig(ConfigError):
    """Analytic gradients requested for a render mode without them."""


class NoTracks(InputError):
    """Object-dependent strategy invoked with an empty track list."""


# --- harness ---------------------------------------------------------------

class MissingPrediction(InputError):
    pass


class EmptyInput(InputError):
    pass


class NoDiscordantPairs(InputError):
    """McNemar with b = c = 0; by convention p = 1.0 (flagged, not raised)."""
