"""Weight memory accounting.

Payload bits count only the codes (4 per small-bit weight, 8 per large-bit
weight). Overhead adds one stored scale per group and one 8-bit zero point
per asymmetric group.
"""

from __future__ import annotations

from collections.abc import Sequence

from mixquant.errors import AssignmentError
from mixquant.mixed_layer.models import FootprintReport, LayerFootprint, MixedLinearLayer
from mixquant.quant_core.models import LARGEBIT_SCHEME, SMALLBIT_SCHEME, QuantizedTensor, QuantScheme
from mixquant.salience_search.models import PrecisionAssignment
from mixquant.tensor_store.models import DType


def _overhead_per_row(scheme: QuantScheme, in_features: int) -> int:
    per_group = scheme.scale_bits + (0 if scheme.symmetric else 8)
    return scheme.n_groups(in_features) * per_group


def memory_footprint(
    assignment: PrecisionAssignment,
    in_features: Sequence[int],
    *,
    smallbit: QuantScheme = SMALLBIT_SCHEME,
    largebit: QuantScheme = LARGEBIT_SCHEME,
) -> FootprintReport:
    if len(in_features) != len(assignment.layer_names):
        raise AssignmentError(f"Need {len(assignment.layer_names)} input widths, got {len(in_features)}")
    layers: list[LayerFootprint] = []
    for name, k, n, large in zip(
        assignment.layer_names, in_features, assignment.out_features, assignment.largebit, strict=True
    ):
        n8 = len(large)
        n4 = n - n8
        layers.append(
            LayerFootprint(
                name=name,
                in_features=k,
                out_features=n,
                n8=n8,
                n4=n4,
                payload_bits=k * (largebit.bit_width * n8 + smallbit.bit_width * n4),
                overhead_bits=n8 * _overhead_per_row(largebit, k) + n4 * _overhead_per_row(smallbit, k),
            )
        )
    return FootprintReport(layers=layers)


def _payload_bits(q: QuantizedTensor | None) -> int:
    if q is None:
        return 0
    bits = len(q.payload.data) * 8
    if q.payload.dtype == DType.U4_PACKED and q.payload.count % 2:
        bits -= 4
    return bits


def _stored_overhead_bits(q: QuantizedTensor | None) -> int:
    if q is None:
        return 0
    bits = q.scales.count * q.scheme.scale_bits
    if q.zero_points is not None:
        bits += len(q.zero_points.data) * 8
    return bits


def footprint_of_layers(layers: Sequence[MixedLinearLayer]) -> FootprintReport:
    """Footprint counted from the materialised payload bytes of each sub-problem."""
    return FootprintReport(
        layers=[
            LayerFootprint(
                name=layer.name,
                in_features=layer.in_features,
                out_features=layer.out_features,
                n8=len(layer.index_map8),
                n4=len(layer.index_map4),
                payload_bits=_payload_bits(layer.sub8) + _payload_bits(layer.sub4),
                overhead_bits=_stored_overhead_bits(layer.sub8) + _stored_overhead_bits(layer.sub4),
            )
            for layer in layers
        ]
    )
