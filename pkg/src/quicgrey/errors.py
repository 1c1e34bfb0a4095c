"""Exception taxonomy shared across the toolkit."""


class QuicGreyError(Exception):
    """Base class for every error raised by this package."""


# --- wire codec -------------------------------------------------------------

class Truncated(QuicGreyError):
    """Buffer ended in the middle of a field."""


class Malformed(QuicGreyError):
    """Field violates a structural rule (bad length, reserved bits, ...)."""


class Overflow(QuicGreyError):
    """Value does not fit the variable-length integer range (< 2**62)."""


class LengthTooSmall(QuicGreyError):
    """Forced varint width cannot represent the value."""


class Unrepresentable(QuicGreyError):
    """Packet fields cannot be serialized together (e.g. token on non-Initial)."""


# --- crypto -----------------------------------------------------------------

class UnsupportedVersion(QuicGreyError):
    """Only QUIC version 1 secrets can be derived."""


class MissingSlot(QuicGreyError):
    """Secrets config lacks one of the required key slots."""


class BadHex(QuicGreyError):
    """Secrets config value is not valid hex."""


class WrongLength(QuicGreyError):
    """Secret has the wrong byte length for the fixed cipher suite."""


class AuthFailure(QuicGreyError):
    """AEAD tag verification failed."""


class NoKeys(QuicGreyError):
    """No key material installed for the requested level/direction."""


class NoInitialPacket(QuicGreyError):
    """Seed sequence carries no client Initial packet to derive secrets from."""


# --- corpus / artifacts -----------------------------------------------------

class BadMagic(QuicGreyError):
    """File does not start with the QFSEED1 magic."""


class TruncatedRecord(QuicGreyError):
    """Record length field exceeds the remaining file size."""


class IoFailure(QuicGreyError):
    """Artifact could not be written."""


class CorruptArtifact(QuicGreyError):
    """Saved artifact triple is incomplete or unreadable."""


# --- harness / lifecycle ----------------------------------------------------

class RendezvousTimeout(QuicGreyError):
    """The other party did not reach the rendezvous within the wedge limit."""


class AdapterClosed(QuicGreyError):
    """I/O attempted on a dead target adapter."""


class InitTimeout(QuicGreyError):
    """Target initialisation exceeded the spawn deadline."""


class SpawnFailure(QuicGreyError):
    """Target exited before reaching its first receive."""


class HandleDead(QuicGreyError):
    """Snapshot handle no longer backs a live target."""


# --- campaign ---------------------------------------------------------------

class TargetUnavailable(QuicGreyError):
    """Campaign cannot spawn its target."""


class CorpusEmpty(QuicGreyError):
    """Campaign started with no usable seeds."""
