"""Simulator for two exoskeletons coupled through a virtual spring-damper during a Sit-to-Stand tracking task."""

__version__ = "0.1.0"
