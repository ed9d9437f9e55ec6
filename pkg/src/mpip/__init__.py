"""Multipath IP (MPIP) engine and a deterministic network simulator to run it in."""
