"""Shared domain types: identifiers, attribute vocabulary, locations and the
canonical protocol-message encoding used by every other layer."""

from iotmp.model.identifiers import validate_identifier
from iotmp.model.attributes import (
    BEHAVIOURAL_NAMES,
    MANAGEMENT_NAMES,
    ManagementAttribute,
    Reading,
    ValidatedDescriptor,
    validate_descriptor,
)
from iotmp.model.location import SemanticLocation
from iotmp.model.messages import (
    FrameDecoder,
    KINDS,
    ProtocolMessage,
    attr,
    body_get,
    decode_message,
    encode_message,
)

__all__ = [
    "validate_identifier",
    "MANAGEMENT_NAMES",
    "BEHAVIOURAL_NAMES",
    "ManagementAttribute",
    "Reading",
    "ValidatedDescriptor",
    "validate_descriptor",
    "SemanticLocation",
    "ProtocolMessage",
    "KINDS",
    "FrameDecoder",
    "encode_message",
    "decode_message",
    "attr",
    "body_get",
]
