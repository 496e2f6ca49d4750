"""Exception hierarchy shared across the pipeline."""


class GedicropError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(GedicropError):
    """Invalid run configuration (bad key, bad value, inconsistent regime)."""


class ValidationError(GedicropError):
    """Input data violates a documented invariant."""


class ParseError(ValidationError):
    """A record could not be parsed.

    Carries the 1-based line number and the offending field name so that
    callers can report ``file:line`` context.
    """

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class FormatError(ValidationError):
    """Binary model stream is truncated, corrupted, or of an unknown version."""


class GridMismatchError(ValidationError):
    """Two rasters that must share a grid do not."""


class FeatureError(GedicropError):
    """Feature extraction failed for one location."""


class TooFewPointsError(FeatureError):
    def __init__(self, count, required):
        self.count = count
        self.required = required
        super().__init__(f"need at least {required} points for harmonic fit, got {count}")


class RankError(FeatureError):
    """Harmonic design matrix is degenerate (e.g. all sample times identical)."""


class UndefinedIndexError(FeatureError):
    """Vegetation index undefined for the given reflectances."""


class InsufficientObservationsError(FeatureError):
    def __init__(self, band, count, required):
        self.band = band
        self.count = count
        self.required = required
        super().__init__(f"band {band}: {count} usable observations, need {required}")


class TrainingError(GedicropError):
    """Classifier cannot be trained on the given data."""


class SplitError(GedicropError):
    """Spatial split is impossible (too few populated cells)."""


class RunError(GedicropError):
    """An experiment run cannot proceed (e.g. class collapse after filtering)."""
