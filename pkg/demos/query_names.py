"""
Service descriptions as DNS names
=================================

"""

from someipdns import ServiceDescription, WILDCARD, enumerate_valid_names, from_query_name, to_query_name
from someipdns.namespace import InvalidCombination

service = ServiceDescription(0x0001, 0x0002, 0x01, 0x00000002)
print(to_query_name(service))

# the six names under which one concrete service must be answerable
for name in enumerate_valid_names(service):
    print(" ", name)

# a minor version is meaningless without a major version
try:
    to_query_name(ServiceDescription(0x0001, 0x0002, WILDCARD, 0x00000002))
except InvalidCombination as exc:
    print("rejected:", exc)

# names parse back case-insensitively, and can hang below any parent domain
print(from_query_name("_SOMEIP.Instance0x0002.ID0x0001.service."))
print(to_query_name(service, "powertrain.vehicle.example."))
