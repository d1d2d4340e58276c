# File: schemas/errors.py
from typing import Optional


# EVERY ERROR THE TOOLKIT RAISES ON PURPOSE DERIVES FROM FrostingError
# main.py MAPS FrostingError -> EXIT CODE 1 AND InvariantViolation -> EXIT CODE 2
class FrostingError(Exception):
    """Base class for expected, user-facing failures."""


class ConfigError(FrostingError):
    """Config file could not be read or did not validate."""


# GEOMETRY / MATH
class ZeroQuaternion(FrostingError):
    pass


class DegreeMismatch(FrostingError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"SH coefficient count {got} does not match degree (expected {expected})")
        self.expected = expected
        self.got = got


class EmptyCloud(FrostingError):
    pass


class TooFewGaussians(FrostingError):
    def __init__(self, count: int, minimum: int = 10):
        super().__init__(f"need at least {minimum} Gaussians, got {count}")
        self.count = count
        self.minimum = minimum


class DegenerateBoundingBox(FrostingError):
    pass


class NonPositiveInput(FrostingError):
    def __init__(self, name: str, value: float):
        super().__init__(f"{name} must be positive, got {value!r}")
        self.name = name
        self.value = value


class DegenerateFace(FrostingError):
    def __init__(self, face_index: int, area: float):
        super().__init__(f"face {face_index} has zero area ({area:.3e})")
        self.face_index = face_index


class ShiftLengthMismatch(FrostingError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected {expected} shift records, got {got}")
        self.expected = expected
        self.got = got


class DegenerateCell(FrostingError):
    pass


class DegenerateCellCenter(FrostingError):
    pass


class DegenerateAxes(FrostingError):
    def __init__(self, count: int):
        super().__init__(f"{count} Gaussians have rank-deficient transferred axes")
        self.count = count


class BadCellIndex(FrostingError):
    def __init__(self, index: int, cell_count: int):
        super().__init__(f"cell index {index} out of range for {cell_count} cells")
        self.index = index


class EmptyLayer(FrostingError):
    pass


class MeshMismatch(FrostingError):
    def __init__(self, expected_vertices: int, got_vertices: int, detail: str = ""):
        message = (
            f"deformed mesh has {got_vertices} vertices, package mesh has {expected_vertices}"
        )
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)
        self.expected_vertices = expected_vertices
        self.got_vertices = got_vertices


# OPTIMIZATION
class NonFiniteLoss(FrostingError):
    def __init__(self, step: int, group: Optional[str] = None):
        where = f" (first non-finite group: {group})" if group else ""
        super().__init__(f"loss became non-finite at step {step}{where}")
        self.step = step
        self.group = group


# FILE FORMATS
class FormatError(FrostingError):
    """Base class for reader failures. Carries a location when one is known."""

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        line: Optional[int] = None,
        offset: Optional[int] = None,
    ):
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.path = path
        self.line = line
        self.offset = offset


class UnsupportedFormat(FormatError):
    pass


class MissingProperty(FormatError):
    def __init__(self, name: str, path: Optional[str] = None):
        super().__init__(f"missing property '{name}'", path=path)
        self.name = name


class BadRestCount(FormatError):
    def __init__(self, count: int, path: Optional[str] = None):
        super().__init__(
            f"{count} f_rest properties, expected one of 0, 9, 24, 45", path=path
        )
        self.count = count


class BadIndex(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class SchemaError(FormatError):
    def __init__(self, key: str, path: Optional[str] = None, detail: str = ""):
        message = f"missing or invalid key '{key}'"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message, path=path)
        self.key = key


class VersionError(FormatError):
    def __init__(self, found: str, supported: str, path: Optional[str] = None):
        super().__init__(
            f"package version {found} is newer than supported {supported}; upgrade the toolkit",
            path=path,
        )
        self.found = found
        self.supported = supported


class CorruptPackage(FormatError):
    pass


# INTERNAL CONSISTENCY - A BUG, NOT A USER ERROR
class InvariantViolation(Exception):
    pass
