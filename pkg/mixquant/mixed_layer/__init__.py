"""Mixed Layer: output-channel split of a linear layer into 8-bit and 4-bit sub-problems."""
