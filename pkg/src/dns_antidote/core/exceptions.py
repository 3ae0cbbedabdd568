"""Custom exceptions for the DNS anti-poisoning toolkit."""


class AntidoteError(Exception):
    """Base exception for all toolkit errors."""
    pass


class ConfigurationError(AntidoteError):
    """Raised when there's an issue with configuration."""
    pass


class WireError(AntidoteError):
    """Base class for DNS wire format encode/decode failures."""
    pass


class NameTooLongError(WireError):
    """Raised when a name has a label over 63 bytes or exceeds 255 bytes on the wire."""
    pass


class LabelTooLongError(WireError):
    """Raised when a decoded label length byte uses a reserved label type."""
    pass


class TooManyRecordsError(WireError):
    """Raised when a section count does not fit in 16 bits."""
    pass


class TruncatedPacketError(WireError):
    """Raised when a packet ends before a field is complete."""
    pass


class PointerLoopError(WireError):
    """Raised when name compression pointers form a cycle."""
    pass


class CountMismatchError(WireError):
    """Raised when header counts disagree with the packet body."""
    pass


class FieldRangeError(WireError):
    """Raised when a numeric field does not fit its wire width."""
    pass


class EntropyError(AntidoteError):
    """Base class for entropy mechanism errors."""
    pass


class EmptyPoolError(EntropyError):
    """Raised when a randomization pool has no candidates."""
    pass


class ExtendedNameTooLongError(EntropyError):
    """Raised when prefix extension would push a name past 255 bytes."""
    pass


class InvalidProbabilityInputError(EntropyError):
    """Raised for negative bit counts or packet counts."""
    pass


class ResolverError(AntidoteError):
    """Base class for resolution failures."""
    pass


class UpstreamTimeoutError(ResolverError):
    """Raised when no acceptable upstream answer arrived in time."""
    pass


class RetriesExhaustedError(ResolverError):
    """Raised when every sandwich session was restarted and none accepted."""
    pass


class GatewayError(AntidoteError):
    """Base class for gateway runtime errors."""
    pass


class BindError(GatewayError):
    """Raised when the gateway cannot bind its listening socket."""
    pass
