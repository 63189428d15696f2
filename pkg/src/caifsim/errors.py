"""Exception hierarchy shared by every layer of the simulator."""


class CaifError(Exception):
    """Base class for all simulator failures."""


# crypto
class AuthFailure(CaifError):
    """Authenticated decryption failed: wrong key, tampered or truncated."""


class MalformedSignedMessage(CaifError):
    pass


# ideal functionality / device instructions
class NoActiveService(CaifError):
    pass


class NoSuchEscrow(CaifError):
    pass


class HandleSpaceExhausted(CaifError):
    """Handle resampling gave up; only reachable with a degenerate sampler."""


class ValueTooLarge(CaifError):
    pass


# device auxiliaries
class AlreadyActive(CaifError):
    pass


class NotRunnable(CaifError):
    pass


class NoSuchRecord(CaifError):
    pass


class FuseAlreadyBlown(CaifError):
    pass


class CompliantHashRefused(CaifError):
    pass


# codec
class CodecError(CaifError):
    pass


class Malformed(CodecError):
    pass


class KindMismatch(CodecError):
    pass


# protocol roles
class RoleAbort(CaifError):
    """A protocol role refused to continue."""


class WrongDevice(RoleAbort):
    pass


class NoConfirm(RoleAbort):
    pass


class ChainMismatch(RoleAbort):
    pass


class BadCertificate(RoleAbort):
    pass


class FieldMismatch(RoleAbort):
    pass


class SerialReuse(RoleAbort):
    pass


class CheckFailed(RoleAbort):
    """A ckattest or MAC verification inside a role came back false."""


class ConfigError(CaifError):
    pass
