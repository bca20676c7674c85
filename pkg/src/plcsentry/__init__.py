"""Inline intrusion-detection relay for industrial controllers.

A TCP mediation proxy that extracts header-level telemetry from every
inbound message, flags anomalies with a semi-supervised Local Outlier
Factor detector, categorizes flagged traffic with a random forest, and
contains attack sources via a pluggable blocklist.  A scenario lab
generates labeled attack traffic and benchmarks the relay overhead.
"""

__version__ = "0.1.0"
