"""Deterministic ZK-rollup pipeline simulator and stress-test benchmark."""

__version__ = "0.1.0"
