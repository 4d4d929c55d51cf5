"""Forensic analysis of messenger call signalling in packet captures.

Detects STUN Binding Requests, folds them into call sessions, correlates
two wiretaps, analyzes presence logs and keeps every step in a
hash-chained custody ledger.
"""

__version__ = "0.1.0"
