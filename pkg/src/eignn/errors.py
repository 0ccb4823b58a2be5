"""Exception hierarchy shared by all eignn modules."""


class EignnError(Exception):
    """Base class for all errors raised by this package."""


class NonSquareError(EignnError):
    pass


class AsymmetricInputError(EignnError):
    pass


class IterationLimitError(EignnError):
    """The eigensolver exceeded its iteration budget without converging."""


class SizeGuardError(EignnError):
    """An operation would materialize a matrix above its size guard."""


class LengthMismatchError(EignnError):
    pass


class DimensionMismatchError(EignnError):
    pass


class NonFiniteResultError(EignnError):
    pass


class NonFiniteLossError(EignnError):
    pass


class EmptyMaskError(EignnError):
    pass


class TraceMismatchError(EignnError):
    """A backward pass received a trace that does not match its inputs."""


class InfeasibleSplitError(EignnError):
    """The requested train share rounds to fewer nodes than classes."""


class ParseError(EignnError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class DanglingNodeIdError(EignnError):
    pass


class SingularUError(EignnError):
    """I - gamma [S (x) g(F)] was singular; this signals a bug upstream."""


class CacheCorruptError(EignnError):
    pass


class VerificationFailedError(EignnError):
    def __init__(self, property_name, detail):
        super().__init__(f"{property_name}: {detail}")
        self.property_name = property_name
