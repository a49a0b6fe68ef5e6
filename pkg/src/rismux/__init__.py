"""RIS phase-shift optimization for uplink spatial multiplexing."""

__version__ = "0.1.0"
