"""Criticality-enhanced quantum sensing simulations."""
