"""Tensor Store: tensor containers, nibble codec and the on-disk model format."""
