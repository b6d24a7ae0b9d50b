"""Decentralized resume credential lifecycle.

Issuers sign resume credentials, holders keep and present them, verifiers
validate the full trust chain against a simulated ledger with a trusted
issuer registry, and a message broker plus realtime channel carry the
traffic between them. See the README for the service and wire surfaces.
"""

__version__ = "0.1.0"
