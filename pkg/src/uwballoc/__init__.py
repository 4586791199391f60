"""Cross-layer sub-band and power allocation for MB-OFDM UWB networks
sharing spectrum with narrowband primary users."""

__version__ = "0.1.0"
