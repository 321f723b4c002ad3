"""Edge coordination service: naming, topology, replica clustering, a quorum
metadata store, self-certifying authentication and a deterministic simulator."""

__version__ = "0.1.0"
