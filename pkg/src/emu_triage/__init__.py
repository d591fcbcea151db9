"""Malware triage from emulated API-call traces and import hashes."""

__version__ = "0.1.0"
