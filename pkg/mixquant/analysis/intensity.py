"""Compute intensity I = 2MNK / (MK * B_act + KN * B_weight), in operations per byte."""

from __future__ import annotations

from mixquant.analysis.models import IntensityQuery


def compute_intensity(q: IntensityQuery) -> float:
    return q.ops / q.bytes_moved


def intensity_gain(base: IntensityQuery, new: IntensityQuery) -> float:
    """Relative change of intensity, e.g. 0.8 for +80%."""
    return compute_intensity(new) / compute_intensity(base) - 1.0


def precision_sweep(m: int, n: int, k: int) -> list[tuple[str, IntensityQuery]]:
    """The W8A8 baseline and the two halvings it is compared against."""
    return [
        ("W8A8", IntensityQuery(m=m, n=n, k=k, b_act=1.0, b_weight=1.0)),
        ("W4A8", IntensityQuery(m=m, n=n, k=k, b_act=1.0, b_weight=0.5)),
        ("W8A4", IntensityQuery(m=m, n=n, k=k, b_act=0.5, b_weight=1.0)),
        ("W4A4", IntensityQuery(m=m, n=n, k=k, b_act=0.5, b_weight=0.5)),
    ]
