"""Initial-state estimation for an early-outbreak epidemic compartment model."""

__version__ = "0.1.0"
