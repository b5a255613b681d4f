"""Resource allocation for an IRS-aided two-user downlink under block fading."""

__version__ = "0.1.0"
