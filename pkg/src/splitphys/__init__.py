"""Headless authoritative physics server, graphics-host client library and relay for shared XR scenes."""

__version__ = "0.1.0"
