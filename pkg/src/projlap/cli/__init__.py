"""Scenario loading and the ``projlap`` command."""
