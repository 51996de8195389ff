"""Domain error hierarchy shared by every service layer.

Each error class carries a stable ``code`` (its class name) used in API
bodies, CLI output and traces, plus the HTTP status it maps to when it
surfaces through the management API.
"""

from __future__ import annotations


class IotmpError(Exception):
    """Base class for all errors raised by this package."""

    http_status = 500

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)

    @property
    def code(self) -> str:
        return self.__class__.__name__


# -- core model ---------------------------------------------------------

class InvalidIdentifier(IotmpError):
    http_status = 400


class MissingID(IotmpError):
    http_status = 400


class DuplicateAttributeName(IotmpError):
    http_status = 400


class MalformedValue(IotmpError):
    http_status = 400


class InvalidKindBody(IotmpError):
    http_status = 400


class MalformedFrame(IotmpError):
    http_status = 400


# -- transport / agent --------------------------------------------------

class TransportUnreachable(IotmpError):
    http_status = 503


class ChannelClosed(TransportUnreachable):
    pass


class JoinRejected(IotmpError):
    pass


class NoManagerDiscovered(IotmpError):
    pass


class UnknownRegistration(IotmpError):
    http_status = 404


class NotRegistered(IotmpError):
    pass


class RejectedUnapproved(IotmpError):
    pass


class PhaseError(IotmpError):
    """Operation invoked outside its declared agent phase."""


class UnknownAttribute(IotmpError):
    http_status = 404


class NotActuatable(IotmpError):
    http_status = 409


class ActuationFailed(IotmpError):
    http_status = 502


# -- manager ------------------------------------------------------------

class DuplicateMTID(IotmpError):
    http_status = 409


class MalformedDescriptor(IotmpError):
    http_status = 400


class UnapprovedAgent(IotmpError):
    http_status = 403


class UnknownMT(IotmpError):
    http_status = 404


class DeviceTimeout(IotmpError):
    http_status = 504


class MoMsUnreachable(IotmpError):
    http_status = 503


# -- security module ----------------------------------------------------

class AlreadyKnown(IotmpError):
    http_status = 409


class NotPending(IotmpError):
    http_status = 409


class NotOwner(IotmpError):
    http_status = 403


# -- privacy module -----------------------------------------------------

class LevelOutOfRange(IotmpError):
    http_status = 422


class PathNotInHierarchy(IotmpError):
    http_status = 422


class PolicyInvalid(IotmpError):
    http_status = 422


# -- management API -----------------------------------------------------

class AppIDTaken(IotmpError):
    http_status = 409


class BadCredentials(IotmpError):
    http_status = 401


class Unauthorized(IotmpError):
    http_status = 401


class Forbidden(IotmpError):
    http_status = 403


class RoleForbidden(Forbidden):
    pass


class NotFound(IotmpError):
    http_status = 404


# -- manager-of-managers ------------------------------------------------

class MalformedTopology(IotmpError):
    http_status = 400


class ManagerUnreachable(IotmpError):
    http_status = 504


# -- harness / CLI ------------------------------------------------------

class ScriptInvalid(IotmpError):
    pass


class UnknownTarget(IotmpError):
    http_status = 404


class ConfigInvalid(IotmpError):
    pass


class BindFailure(IotmpError):
    pass
