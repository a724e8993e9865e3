"""Verification harness: invariance audit, ISS tracking bound, closed-form/oracle benchmark."""
__all__ = [
    "benchmark",
    "invariance",
    "iss",
    "metrics",
]
