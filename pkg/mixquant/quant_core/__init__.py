"""Quant Core: group-wise round-to-nearest quantizers and their inverse."""
