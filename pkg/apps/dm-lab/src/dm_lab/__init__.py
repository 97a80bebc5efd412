"""Experiment runner for the doob_meyer library."""
