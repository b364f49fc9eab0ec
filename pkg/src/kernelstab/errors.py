"""Exception hierarchy shared by every kernelstab module."""


class KernelStabError(Exception):
    """Base class for all library errors."""


class EmptySet(KernelStabError):
    pass


class UnsupportedDimension(KernelStabError):
    pass


class NotSubset(KernelStabError):
    pass


class DegenerateSpan(KernelStabError):
    """The point set does not span the ambient dimension."""


class OutOfBox(KernelStabError):
    """A point handed to a fixed-anchor engine lies outside [-1, 1]^d."""


class UnknownId(KernelStabError, KeyError):
    pass


class DuplicateId(KernelStabError, KeyError):
    pass


class BadEpsilon(KernelStabError, ValueError):
    pass


class BadParams(KernelStabError, ValueError):
    pass


class ParseError(KernelStabError):
    pass


class VerificationFailed(KernelStabError):
    pass
