"""Collective-communication tracing, simulation and root-cause analysis."""
