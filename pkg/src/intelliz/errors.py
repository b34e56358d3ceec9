"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class IntelliZError(Exception):
    exit_code = 1
    code = "error"


class ConfigError(IntelliZError, ValueError):
    exit_code = 2
    code = "config"


class AudioFormatError(IntelliZError, ValueError):
    exit_code = 3
    code = "audio_format"


class FileFormatError(IntelliZError, ValueError):
    exit_code = 4
    code = "file_format"


class NoVoicedFramesError(IntelliZError, ValueError):
    exit_code = 5
    code = "no_voiced_frames"

    def __init__(self, message="no voiced frames in reference"):
        super().__init__(message)


class CorpusError(IntelliZError, ValueError):
    exit_code = 6
    code = "corpus"


class DivergenceError(IntelliZError, FloatingPointError):
    exit_code = 7
    code = "divergence"


class ShapeError(IntelliZError, ValueError):
    exit_code = 8
    code = "shape"


class StaleCacheError(IntelliZError, RuntimeError):
    exit_code = 9
    code = "stale_cache"


class FrozenParameterError(IntelliZError, TypeError):
    exit_code = 10
    code = "frozen"


class EpisodeError(IntelliZError, ValueError):
    exit_code = 11
    code = "episode"


class VocabularyError(IntelliZError, ValueError):
    exit_code = 12
    code = "vocabulary"


class MissingPrototypeError(IntelliZError, KeyError):
    exit_code = 13
    code = "missing_prototype"

    def __str__(self):
        return str(self.args[0]) if self.args else "missing prototype"
