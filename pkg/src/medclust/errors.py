"""Exception hierarchy shared by all pipeline stages."""


class MedclustError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MedclustError):
    pass


# --- DICOM parsing ---

class MissingMagicError(MedclustError):
    """File lacks the 128-byte preamble + 'DICM' prefix."""


class UnsupportedTransferSyntaxError(MedclustError):
    """Transfer syntax other than explicit/implicit-VR little endian."""


class TruncatedElementError(MedclustError):
    """Byte stream ended in the middle of a data element."""


class MissingPixelDataError(MedclustError):
    """Image export requested but the file carries no PixelData."""


class NonlinearLutPresentError(MedclustError):
    """File declares a VOI LUT sequence; nonlinear transforms are rejected."""


# --- image export ---

class InvalidWindowError(MedclustError):
    """WindowWidth is non-numeric or not strictly positive."""


class NoValidWindowError(MedclustError):
    """Every window candidate flattens the image to one intensity."""


class NoMeaningfulFrameError(MedclustError):
    """No frame passes the value policy."""


# --- tag pipeline ---

class RulesFileInvalidError(MedclustError):
    """Body-part rules file failed to load or a pattern does not compile."""


class AllMissingColumnError(MedclustError):
    """A column has no observed value to learn an imputation from."""


class ZeroRangeColumnError(MedclustError):
    """Continuous column with min == max; cannot be min-max scaled."""


# --- text pipeline ---

class EmptyCorpusError(MedclustError):
    """Frequency threshold excluded every stem."""


class LeakageError(MedclustError):
    """A fit-time statistic was requested on a non-training split."""


# --- feature extraction ---

class RankTooLowError(MedclustError):
    """Requested components exceed the effective rank of the data."""


class NonFiniteInputError(MedclustError):
    pass


class DimensionMismatchError(MedclustError):
    pass


class IdMismatchError(MedclustError):
    """Imported matrix ids do not match the expected instance ids."""


class CorruptFileError(MedclustError):
    pass


# --- clustering ---

class KappaExceedsNError(MedclustError):
    pass


class ZeroVectorWithCosineError(MedclustError):
    """Cosine distance is undefined on zero rows."""


# --- evaluation ---

class EmptyInputError(MedclustError):
    pass


class DegenerateLabelsError(MedclustError):
    """Both label sequences are constant; NMI denominator is zero."""


class ZeroTargetEntropyError(MedclustError):
    pass


class ZeroVectorError(MedclustError):
    pass


# --- fusion ---

class RowMismatchError(MedclustError):
    pass


class IdMisalignmentError(MedclustError):
    pass


class NonFiniteDistanceError(MedclustError):
    pass


# --- orchestration ---

class TooFewExamsError(MedclustError):
    pass


class SchemaDriftError(MedclustError):
    """New corpus is missing a tag column the frozen model requires."""
