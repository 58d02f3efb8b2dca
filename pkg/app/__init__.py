"""Distributional random forests with uncertainty quantification."""
