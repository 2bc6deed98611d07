"""Service dependency discovery through NAT with TCP-option identifiers,
on top of a small deterministic network simulator."""

__version__ = "0.1.0"
