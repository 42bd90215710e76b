"""Closed-loop 5G analytics: UPF event exposure, NWDAF bot detection, SMF mitigation."""

__version__ = "0.1.0"
