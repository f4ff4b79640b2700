"""GEMM Engine: CPU reference of the mixed-precision W4A8/W8A8 kernel."""
