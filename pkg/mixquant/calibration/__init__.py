"""Calibration: toy network, synthetic calibration data and analytic gradients."""
