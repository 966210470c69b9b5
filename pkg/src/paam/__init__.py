"""Response-time analysis and simulation of processing chains that share
hardware accelerators through a priority-driven access server."""

__version__ = "0.1.0"
