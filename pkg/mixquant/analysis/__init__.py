"""Analysis: compute intensity, precision distribution and proxy-quality reports."""
