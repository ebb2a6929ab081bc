"""
Encoding a SOME/IP-SD offer
===========================

"""

from someipdns import EndpointInfo, EntryType, L4Protocol, SdEntry, SdMessage, ServiceDescription, WILDCARD

# service 0x0001, instance 2, version 1.2, reachable over UDP on 10.0.0.5:30509
service = ServiceDescription(0x0001, 0x0002, 0x01, 0x00000002)
endpoint = EndpointInfo("10.0.0.5", L4Protocol.UDP, 30509)

# an offer entry references its endpoint option by index
offer = SdEntry(EntryType.OFFER, service, 3, None, (0,))
msg = SdMessage(session_id=1, reboot_flag=False, unicast_flag=True, entries=(offer,), options=(endpoint,))
wire = msg.encode()
for i in range(0, len(wire), 16):
    print(wire[i:i + 16].hex(" "))

# decoding gives back the same message
print(SdMessage.decode(wire) == msg)

# a find for any instance of the service uses the wildcard encodings
find = SdEntry(EntryType.FIND, ServiceDescription(0x0001, WILDCARD, WILDCARD, WILDCARD), 3)
print(SdMessage(2, entries=(find,)).encode()[24:40].hex(" "))
