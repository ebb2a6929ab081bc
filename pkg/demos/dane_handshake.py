"""
Publisher authentication by challenge and response
==================================================

"""

import random

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from someipdns import ServiceDescription, auth

service = ServiceDescription(0x0001, 0x0002, 0x01, 0x00000002)
key = Ed25519PrivateKey.generate()
cert = auth.make_certificate(key, "publisher")

# the subscriber draws a fresh nonce and sends it in a configuration option
challenge = auth.make_challenge(random.Random(42))
print("nonce option:", auth.nonce_option(challenge))

# the publisher signs the nonce bound to the service it offers
response = auth.sign_challenge(challenge, key, service)
print("sig option:  ", auth.signature_option(response))

# with the certificate from the TLSA record the subscriber checks the answer
print(auth.verify_response(response, challenge, cert, service))

# an impostor holding another key fails
impostor = auth.sign_challenge(challenge, Ed25519PrivateKey.generate(), service)
print(auth.verify_response(impostor, challenge, cert, service))

# and a recorded answer does not satisfy the next nonce
print(auth.verify_response(response, auth.make_challenge(), cert, service))
