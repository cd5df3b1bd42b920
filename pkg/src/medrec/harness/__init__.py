"""Batch orchestration, experiment drivers and run configuration."""
