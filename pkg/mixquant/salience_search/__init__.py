"""Salience Search: per-channel loss-salience estimates and global bit-width assignment."""
