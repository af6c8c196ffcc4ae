"""Exception hierarchy shared by every comhr module."""


class ComhrError(Exception):
    """Base class for all library errors."""


class ShapeError(ComhrError, ValueError):
    def __init__(self, op, *dims):
        self.op = op
        self.dims = tuple(tuple(d) for d in dims)
        shown = " vs ".join(str(list(d)) for d in self.dims)
        super().__init__(f"{op}: incompatible dims {shown}")


class DomainError(ComhrError, ValueError):
    """A value lies outside the domain of an operation (e.g. log of x <= 0)."""


class NonScalarLossError(ComhrError, ValueError):
    pass


class GradcheckError(ComhrError):
    def __init__(self, message, param=None, index=None):
        self.param = param
        self.index = index
        super().__init__(message)


class SceneError(ComhrError, ValueError):
    pass


class PerturbationError(ComhrError, ValueError):
    pass


class ContainerError(ComhrError):
    """Malformed tensor container or manifest."""


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class DimOverflowError(ContainerError):
    pass


class MissingFileError(ContainerError, FileNotFoundError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"missing file: {self.path}")


class NonFiniteLossError(ComhrError, FloatingPointError):
    def __init__(self, component, value):
        self.component = component
        self.value = value
        super().__init__(f"non-finite loss component {component!r}: {value}")
