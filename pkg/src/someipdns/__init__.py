"""Secure SOME/IP service discovery through DNSSEC-validated SVCB records
and DANE-anchored publisher authentication."""

from .wire import (
    WILDCARD,
    ConfigOption,
    EndpointInfo,
    EntryType,
    L4Protocol,
    SdEntry,
    SdMessage,
    ServiceDescription,
    decode_sd_message,
    encode_sd_message,
)
from .namespace import (
    ServiceQueryName,
    enumerate_valid_names,
    from_query_name,
    to_query_name,
)
from .engine import VariantMode

__version__ = "0.1.0"

__all__ = [
    "WILDCARD",
    "ConfigOption",
    "EndpointInfo",
    "EntryType",
    "L4Protocol",
    "SdEntry",
    "SdMessage",
    "ServiceDescription",
    "ServiceQueryName",
    "VariantMode",
    "decode_sd_message",
    "encode_sd_message",
    "enumerate_valid_names",
    "from_query_name",
    "to_query_name",
]
