"""Plain-text tables for reports printed on stdout."""

from __future__ import annotations

from collections.abc import Sequence

from mixquant.analysis.intensity import compute_intensity
from mixquant.analysis.models import DistributionReport, IntensityQuery, ProxyReport
from mixquant.mixed_layer.models import FootprintReport


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(cell)) for cell in column) for column in zip(header, *rows, strict=True)]
    lines = ["  ".join(str(cell).ljust(width) for cell, width in zip(header, widths, strict=True)).rstrip()]
    lines.append("  ".join("-" * width for width in widths))
    lines.extend(
        "  ".join(str(cell).ljust(width) for cell, width in zip(row, widths, strict=True)).rstrip() for row in rows
    )
    return "\n".join(lines)


def render_distribution(report: DistributionReport) -> str:
    layers = _table(
        ["layer", "channels", "8-bit", "percent"],
        [[r.name, str(r.channels), str(r.promoted), f"{100 * r.percent:.2f}%"] for r in report.layers],
    )
    classes = _table(
        ["class", "layers", "avg percent"],
        [[c.layer_class, str(c.layers), f"{100 * c.average_percent:.2f}%"] for c in report.classes],
    )
    return f"{layers}\n\n{classes}\n\nglobal: {100 * report.global_percent:.2f}%"


def render_footprint(report: FootprintReport) -> str:
    rows = [
        [
            layer.name,
            f"{layer.out_features}x{layer.in_features}",
            str(layer.n8),
            f"{layer.effective_bits:.3f}",
            f"{layer.effective_bits_with_overhead:.3f}",
        ]
        for layer in report.layers
    ]
    totals = [f"{report.effective_bits:.3f}", f"{report.effective_bits_with_overhead:.3f}"]
    rows.append(["total", str(report.total_weights), "", *totals])
    return _table(["layer", "shape", "8-bit rows", "bits/w", "bits/w+meta"], rows)


def render_intensity(queries: Sequence[tuple[str, IntensityQuery]]) -> str:
    base = compute_intensity(queries[0][1])
    rows = []
    for label, q in queries:
        value = compute_intensity(q)
        rows.append([label, f"{q.b_act:g}", f"{q.b_weight:g}", f"{value:.2f}", f"{100 * (value / base - 1):+.2f}%"])
    return _table(["config", "B_act", "B_weight", "ops/byte", "vs " + queries[0][0]], rows)


def render_proxy(report: ProxyReport) -> str:
    return _table(
        ["samples", "float loss", "quant loss", "loss delta", "shift", "logit mse"],
        [
            [
                str(report.samples),
                f"{report.float_loss:.6f}",
                f"{report.quantized_loss:.6f}",
                f"{report.loss_delta:.6f}",
                f"{report.mean_loss_shift:+.6f}",
                f"{report.logit_mse:.6g}",
            ]
        ],
    )
