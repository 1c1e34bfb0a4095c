"""Greybox mutation fuzzer for QUIC v1 with plaintext-level mutation.

The toolkit decrypts recorded QUIC sessions, mutates the plaintext, re-applies
packet protection, and drives a deterministic reference server through an
event-serialized harness with snapshot-based resets.
"""

__version__ = "0.1.0"
