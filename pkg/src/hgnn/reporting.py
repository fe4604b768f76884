"""Report emission: grid CSV, SVG heatmap/radar figures, config text dumps.

Figures are plain hand-built SVG strings so the bytes are reproducible; every
number printed into a figure is the same in-memory value written to the CSV,
formatted to 3 decimals.
"""

import csv
import io
import math

from .models import ARCHITECTURES
from .operators import OPERATOR_KINDS

GRID_COLUMNS = ("architecture", "operator", "accuracy", "weighted_f1", "mean_loss", "loss_std")

# 2-stop linear color ramp for heatmap cells: value 0 -> light, 1 -> dark blue
RAMP_LOW = (0xF7, 0xFB, 0xFF)
RAMP_HIGH = (0x08, 0x30, 0x6B)


def _ramp(value):
    v = min(1.0, max(0.0, value))
    rgb = tuple(round(lo + (hi - lo) * v) for lo, hi in zip(RAMP_LOW, RAMP_HIGH))
    return "#%02x%02x%02x" % rgb


def _fmt(value):
    return f"{value:.3f}"


# -- grid CSV ---------------------------------------------------------------------


def grid_csv_text(cells):
    """CSV with one row per (architecture, operator) cell in fixed axis order.

    cells: {(arch, op): MetricsReport or None}; failed cells leave the metric
    columns empty.
    """
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(GRID_COLUMNS)
    for arch in ARCHITECTURES:
        for op in OPERATOR_KINDS:
            report = cells.get((arch, op))
            if report is None:
                writer.writerow([arch, op, "", "", "", ""])
            else:
                writer.writerow([
                    arch, op,
                    repr(report.accuracy), repr(report.weighted_f1),
                    repr(report.mean_loss), repr(report.loss_std),
                ])
    return out.getvalue()


def write_grid_csv(path, cells):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(grid_csv_text(cells))


def read_grid_csv(path):
    """Inverse of write_grid_csv; returns {(arch, op): dict or None}."""
    cells = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            key = (row["architecture"], row["operator"])
            if row["accuracy"] == "":
                cells[key] = None
            else:
                cells[key] = {
                    "accuracy": float(row["accuracy"]),
                    "weighted_f1": float(row["weighted_f1"]),
                    "mean_loss": float(row["mean_loss"]),
                    "loss_std": float(row["loss_std"]),
                }
    return cells


def _cell_value(report, metric):
    if report is None:
        return None
    if isinstance(report, dict):
        return report[metric]
    return getattr(report, metric)


# -- heatmap -----------------------------------------------------------------------


def heatmap_svg(cells, metric="accuracy", title=None):
    cell_w, cell_h = 110, 64
    left, top = 170, 70
    width = left + cell_w * len(OPERATOR_KINDS) + 30
    height = top + cell_h * len(ARCHITECTURES) + 40
    title = title or f"{metric} by architecture and operator"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="30" font-family="sans-serif" font-size="18" '
        f'text-anchor="middle">{title}</text>',
    ]
    for j, op in enumerate(OPERATOR_KINDS):
        x = left + j * cell_w + cell_w / 2
        parts.append(
            f'<text x="{x:.1f}" y="{top - 12}" font-family="sans-serif" font-size="14" '
            f'text-anchor="middle">{op}</text>'
        )
    for i, arch in enumerate(ARCHITECTURES):
        y = top + i * cell_h + cell_h / 2
        parts.append(
            f'<text x="{left - 10}" y="{y + 5:.1f}" font-family="sans-serif" font-size="13" '
            f'text-anchor="end">{arch}</text>'
        )
        for j, op in enumerate(OPERATOR_KINDS):
            x = left + j * cell_w
            value = _cell_value(cells.get((arch, op)), metric)
            if value is None:
                fill, label, text_color = "#cccccc", "fail", "#333333"
            else:
                fill, label = _ramp(value), _fmt(value)
                text_color = "#ffffff" if value > 0.6 else "#000000"
            parts.append(
                f'<rect x="{x}" y="{top + i * cell_h}" width="{cell_w}" height="{cell_h}" '
                f'fill="{fill}" stroke="white" stroke-width="2"/>'
            )
            parts.append(
                f'<text x="{x + cell_w / 2:.1f}" y="{top + i * cell_h + cell_h / 2 + 5:.1f}" '
                f'font-family="sans-serif" font-size="15" text-anchor="middle" '
                f'fill="{text_color}">{label}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- radar charts -------------------------------------------------------------------


def radar_svg(operator, cells, metric="accuracy"):
    """One radar per operator: four architecture spokes, rings at 0.25 steps."""
    size = 420
    cx = cy = size / 2
    radius = 130
    angles = {arch: math.pi / 2 + i * math.pi / 2 for i, arch in enumerate(ARCHITECTURES)}

    def point(arch, r):
        a = angles[arch]
        return cx + r * math.cos(a), cy - r * math.sin(a)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<text x="{cx:.1f}" y="28" font-family="sans-serif" font-size="17" '
        f'text-anchor="middle">{operator}: {metric} by architecture</text>',
    ]
    for ring in (0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="{radius * ring:.1f}" fill="none" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{cx + 4:.1f}" y="{cy - radius * ring - 3:.1f}" font-family="sans-serif" '
            f'font-size="9" fill="#999999">{ring:g}</text>'
        )
    poly = []
    for arch in ARCHITECTURES:
        tip = point(arch, radius)
        parts.append(
            f'<line x1="{cx:.1f}" y1="{cy:.1f}" x2="{tip[0]:.1f}" y2="{tip[1]:.1f}" '
            f'stroke="#bbbbbb" stroke-width="1"/>'
        )
        lx, ly = point(arch, radius + 34)
        value = _cell_value(cells.get((arch, operator)), metric)
        label = "fail" if value is None else _fmt(value)
        parts.append(
            f'<text x="{lx:.1f}" y="{ly:.1f}" font-family="sans-serif" font-size="12" '
            f'text-anchor="middle">{arch}</text>'
        )
        parts.append(
            f'<text x="{lx:.1f}" y="{ly + 14:.1f}" font-family="sans-serif" font-size="12" '
            f'text-anchor="middle" fill="#08306b">{label}</text>'
        )
        px, py = point(arch, radius * (value or 0.0))
        poly.append(f"{px:.2f},{py:.2f}")
    parts.append(
        f'<polygon points="{" ".join(poly)}" fill="#4292c6" fill-opacity="0.45" '
        f'stroke="#08306b" stroke-width="2"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_figures(out_dir, cells, metric="accuracy"):
    """Write heatmap.svg plus one radar per operator; returns the paths."""
    import os

    paths = []
    heat = os.path.join(out_dir, "heatmap.svg")
    with open(heat, "w", encoding="utf-8") as fh:
        fh.write(heatmap_svg(cells, metric))
    paths.append(heat)
    for op in OPERATOR_KINDS:
        p = os.path.join(out_dir, f"radar_{op}.svg")
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(radar_svg(op, cells, metric))
        paths.append(p)
    return paths


# -- human-readable config dump -------------------------------------------------------


def _layer_lines(lines, title, specs):
    for i, spec in enumerate(specs, start=1):
        lines.append(f"  {title} {i}:")
        lines.append(f"    Units: {spec.units}")
        if spec.skip:
            lines.append("    Skip Connections: True")
        if spec.batch_norm:
            lines.append(f"    Batch Norm Momentum: {spec.bn_momentum:.4f}")
            lines.append(f"    Batch Norm Epsilon: {spec.bn_eps:.4e}")
        lines.append(f"    Activation: {spec.activation}")
        if spec.dropout is not None:
            lines.append(f"    Dropout: {spec.dropout:.4f}")


def config_text_dump(trial_config, dims, summary=None):
    """Appendix-style plain-text listing of one full configuration."""
    m = trial_config.model
    lines = ["Best hyperparameters found were:"]
    lines.append(f"Architecture: {m.architecture}")
    lines.append(f"Operator: {m.operator}")
    lines.append(f"Output Size: {m.output_size}")
    lines.append(f"Batch Size: {trial_config.batch_size}")
    lines.append(f"Event Input Size: {dims['d_N']}")
    lines.append(f"Number of GNN layers: {len(m.gnn_layers)}")
    _layer_lines(lines, "GNN Layer", m.gnn_layers)
    if m.architecture == "two_level_pseudo":
        lines.append(f"Duration Embedding Input Size: {dims['n_bins']}")
        lines.append(f"Number of Duration Embedding GNN layers: {len(m.pseudo_gnn_layers)}")
        _layer_lines(lines, "Duration Embedding GNN Layer", m.pseudo_gnn_layers)
        lines.append(f"Number of Concatenated GNN layers: {len(m.concat_gnn_layers)}")
        _layer_lines(lines, "Concatenated GNN Layer", m.concat_gnn_layers)
    if m.architecture == "two_level_embedding":
        lines.append(f"Activity Embedding Dim: {m.embedding_dim}")
    if m.K is not None:
        lines.append(f"Filter Order K: {m.K}")
    if m.graph_aggregation is not None:
        lines.append(f"Neighborhood Aggregation: {m.graph_aggregation}")
    lines.append(f"Pooling Method: {m.pooling}")
    if m.architecture != "one_level":
        lines.append(f"Sequence Input Size: {dims['d_G']}")
        lines.append(f"Number of Sequence Dense layers: {len(m.sequence_dense_layers)}")
        _layer_lines(lines, "Sequence Dense Layer", m.sequence_dense_layers)
    lines.append(f"Number of Dense layers: {len(m.final_dense_layers)}")
    _layer_lines(lines, "Dense Layer", m.final_dense_layers)

    opt = trial_config.optimizer
    lines.append(f"Optimizer: {opt.kind}")
    lines.append(f"  Learning Rate: {opt.learning_rate:.4e}")
    lines.append(f"  Weight Decay: {opt.weight_decay:.4e}")
    lines.append(f"  L1 Lambda: {opt.l1_lambda:.4e}")
    if opt.kind == "adam":
        lines.append(f"  Beta1: {opt.adam_beta1:.4f}")
        lines.append(f"  Beta2: {opt.adam_beta2:.4f}")
    elif opt.kind == "sgd":
        lines.append(f"  Momentum: {opt.sgd_momentum:.4f}")
    else:
        lines.append(f"  Alpha: {opt.rmsprop_alpha:.4f}")
        lines.append(f"  Momentum: {opt.rmsprop_momentum:.4f}")
        lines.append(f"  Eps: {opt.rmsprop_eps:.4e}")

    sch = trial_config.scheduler
    lines.append(f"Learning Rate Schedule: {sch.kind}")
    for name in sch._REQUIRED[sch.kind]:
        value = getattr(sch, name)
        label = name.replace("_", " ").title()
        if isinstance(value, float) and (value < 0.01 or value >= 1000):
            lines.append(f"  {label}: {value:.4e}")
        elif isinstance(value, float):
            lines.append(f"  {label}: {value:.4f}")
        else:
            lines.append(f"  {label}: {value}")

    lines.append(f"Loss function: {trial_config.loss}")
    if summary:
        lines.append("")
        for key in ("best_epoch", "accuracy", "weighted_f1", "mean_loss", "loss_std"):
            if key in summary:
                label = {
                    "best_epoch": "Best epoch",
                    "accuracy": "Best accuracy",
                    "weighted_f1": "Best weighted F1",
                    "mean_loss": "Best loss",
                    "loss_std": "Best loss std",
                }[key]
                value = summary[key]
                lines.append(f"{label}: {value:.4f}" if isinstance(value, float) else f"{label}: {value}")
    return "\n".join(lines) + "\n"
