"""folkfed: peer-first federated linked data.

Peers publish versioned namespaces of authored quads over content-addressed
blobs, federate under explicit permission policies, replicate and query each
other's metadata, and freeze analysis workflows into deterministic lockfiles.
"""

from __future__ import annotations

__version__ = "0.1.0"
