"""Mapping between service descriptions and DNS query names.

A service instance is published under names of the form::

    _someip[.minor0x........][.major0x..][.instance0x....].id0x....<parent>

Each field label is present only when the field is concrete. A minor label
without a major label is rejected, which leaves six valid names per fully
specified instance.
"""

from __future__ import annotations

import dataclasses
import itertools
import re
import typing

from .wire import WILDCARD, ServiceDescription

DEFAULT_PARENT = "service."
PREFIX_LABEL = "_someip"

# (label prefix, attribute, hex width) in left-to-right order
_FIELDS = (
    ("minor", "minor_version", 8),
    ("major", "major_version", 2),
    ("instance", "instance_id", 4),
    ("id", "service_id", 4),
)
_LABEL_RE = re.compile(r"^(minor|major|instance|id)0x([0-9a-f]+)$")


class NamespaceError(ValueError):
    pass


class InvalidCombination(NamespaceError):
    pass


class MalformedLabel(NamespaceError):
    pass


class WrongOrder(NamespaceError):
    pass


def normalize_name(name: str) -> str:
    """Lowercase absolute form of a dotted DNS name."""
    name = name.strip().lower()
    if name in ("", "."):
        return "."
    if not name.endswith("."):
        name += "."
    return name


@dataclasses.dataclass(frozen=True)
class ServiceQueryName:
    labels: typing.Tuple[str, ...]
    parent_domain: str = DEFAULT_PARENT

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(l.lower() for l in self.labels))
        object.__setattr__(self, "parent_domain", normalize_name(self.parent_domain))

    def __str__(self) -> str:
        parent = "" if self.parent_domain == "." else self.parent_domain
        return ".".join(self.labels) + "." + parent

    @classmethod
    def parse(cls, name: str, parent: str = DEFAULT_PARENT) -> ServiceQueryName:
        name = normalize_name(name)
        parent = normalize_name(parent)
        if parent == ".":
            head = name[:-1]
        elif name.endswith("." + parent):
            head = name[: -len(parent) - 1]
        else:
            raise MalformedLabel(f"{name!r} is not below {parent!r}")
        if not head:
            raise MalformedLabel(f"{name!r} has no service labels")
        return cls(tuple(head.split(".")), parent)


def _check_combination(desc: ServiceDescription) -> None:
    if desc.minor_version is not WILDCARD and desc.major_version is WILDCARD:
        raise InvalidCombination("a minor version requires a major version")


def to_query_name(desc: ServiceDescription, parent: str = DEFAULT_PARENT) -> ServiceQueryName:
    _check_combination(desc)
    labels = [PREFIX_LABEL]
    for prefix, attr, width in _FIELDS:
        value = getattr(desc, attr)
        if value is not WILDCARD:
            labels.append(f"{prefix}0x{value:0{width}x}")
    return ServiceQueryName(tuple(labels), parent)


def from_query_name(
    name: typing.Union[ServiceQueryName, str], parent: str = DEFAULT_PARENT
) -> ServiceDescription:
    if isinstance(name, str):
        name = ServiceQueryName.parse(name, parent)
    labels = name.labels
    if not labels or labels[0] != PREFIX_LABEL:
        raise MalformedLabel(f"first label must be {PREFIX_LABEL!r}")
    order = {prefix: i for i, (prefix, _, _) in enumerate(_FIELDS)}
    widths = {prefix: width for prefix, _, width in _FIELDS}
    attrs = {prefix: attr for prefix, attr, _ in _FIELDS}
    values: typing.Dict[str, int] = {}
    last = -1
    for label in labels[1:]:
        m = _LABEL_RE.match(label)
        if not m:
            raise MalformedLabel(f"unrecognised label {label!r}")
        prefix, digits = m.groups()
        if len(digits) != widths[prefix]:
            raise MalformedLabel(f"{label!r}: expected {widths[prefix]} hex digits")
        if order[prefix] <= last:
            raise WrongOrder(f"{label!r} out of order in {name}")
        last = order[prefix]
        values[attrs[prefix]] = int(digits, 16)
    if "service_id" not in values:
        raise MalformedLabel(f"{name} lacks an id label")
    if "minor_version" in values and "major_version" not in values:
        raise InvalidCombination(f"{name}: minor without major")
    try:
        return ServiceDescription(**values)
    except ValueError as exc:
        raise MalformedLabel(str(exc)) from None


def enumerate_valid_names(
    concrete: ServiceDescription, parent: str = DEFAULT_PARENT
) -> typing.List[ServiceQueryName]:
    """All query names under which a fully specified instance must resolve."""
    if not concrete.is_concrete:
        raise ValueError(f"{concrete} has wildcards")
    names = []
    for keep_inst, keep_major, keep_minor in itertools.product((True, False), repeat=3):
        if keep_minor and not keep_major:
            continue
        desc = ServiceDescription(
            concrete.service_id,
            concrete.instance_id if keep_inst else WILDCARD,
            concrete.major_version if keep_major else WILDCARD,
            concrete.minor_version if keep_minor else WILDCARD,
        )
        names.append(to_query_name(desc, parent))
    return names


def name_matches(
    desc: ServiceDescription,
    name: typing.Union[ServiceQueryName, str],
    parent: str = DEFAULT_PARENT,
) -> bool:
    """Does the concrete ``desc`` answer query ``name``?"""
    return from_query_name(name, parent).matches(desc)
