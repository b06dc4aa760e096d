"""Align and Density layout-quality metrics and method comparison reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .layout import Layout

# g is evaluated on deltas clamped just below 1 to stay finite
DELTA_CLAMP = 1.0 - 1e-6


@dataclass(frozen=True)
class MetricsReport:
    align_sum: float
    align_mean: float
    density: float
    n_elements: int
    density_union: float | None = None


def _anchors(layout: Layout) -> np.ndarray:
    """(n, 6) normalised left, centre-x, right, top, centre-y, bottom."""
    W, H = layout.page.width_px, layout.page.height_px
    box = np.array([(p.x, p.y, p.w, p.h) for p in layout.placed], dtype=np.float64).reshape(-1, 4)
    x, y, w, h = box.T
    return np.stack([x / W, (x + w / 2) / W, (x + w) / W, y / H, (y + h / 2) / H, (y + h) / H], axis=1)


def align_score(layout: Layout) -> tuple[float, float]:
    """Return ``(align_sum, align_mean)``.

    For each element, each of the six anchors is compared with the same
    anchor of every other element; the element scores the smallest
    ``-log(1 - delta)`` over the six nearest-neighbour deltas. A single
    element scores 0.
    """
    n = len(layout.placed)
    if n == 0:
        raise ValueError("align score of an empty layout is undefined")
    if n == 1:
        return 0.0, 0.0
    a = _anchors(layout)
    diff = np.abs(a[:, None, :] - a[None, :, :])
    diff[np.arange(n), np.arange(n), :] = np.inf
    delta = np.clip(diff.min(axis=1), 0.0, DELTA_CLAMP)
    per_elem = (-np.log1p(-delta)).min(axis=1)
    total = float(per_elem.sum())
    return total, total / n


def density_score(layout: Layout) -> float:
    """Summed element area over page area (overlaps counted twice)."""
    return sum(p.w * p.h for p in layout.placed) / layout.page.area


def union_density(layout: Layout) -> float:
    """Covered-area fraction of the page; differs from ``density_score`` only under overlap."""
    mask = np.zeros((layout.page.height_px, layout.page.width_px), dtype=bool)
    for p in layout.placed:
        mask[p.y : p.y + p.h, p.x : p.x + p.w] = True
    return float(mask.mean())


def evaluate(layout: Layout, with_union: bool = False) -> MetricsReport:
    s, m = align_score(layout) if layout.placed else (0.0, 0.0)
    return MetricsReport(s, m, density_score(layout), len(layout.placed), union_density(layout) if with_union else None)


@dataclass(frozen=True)
class MethodSummary:
    method: str
    n_layouts: int
    align_mean: float
    align_sum: float
    density: float
    mean_elements: float
    align_ratio: float | None = None
    density_ratio: float | None = None


def summarize(method: str, layouts: Sequence[Layout]) -> MethodSummary:
    if not layouts:
        raise ValueError(f"dataset {method!r} is empty")
    reps = [evaluate(l) for l in layouts]
    return MethodSummary(
        method=method,
        n_layouts=len(reps),
        align_mean=float(np.mean([r.align_mean for r in reps])),
        align_sum=float(np.mean([r.align_sum for r in reps])),
        density=float(np.mean([r.density for r in reps])),
        mean_elements=float(np.mean([r.n_elements for r in reps])),
    )


def _ratio(a, b):
    if b == 0:
        return 1.0 if a == 0 else float("inf")
    return a / b


def compare_methods(datasets: Mapping[str, Sequence[Layout]], baseline: str | None = None) -> list[MethodSummary]:
    """Per-method mean Align/Density with ratios against ``baseline``.

    Ratios are filled only when two or more methods are compared; the
    baseline defaults to ``"random"`` when present, else the first method.
    """
    if not datasets:
        raise ValueError("no datasets to compare")
    pages = {l.page for layouts in datasets.values() for l in layouts}
    if len(pages) > 1:
        raise ValueError(f"datasets use different page specs: {sorted(map(str, pages))}")
    rows = [summarize(name, layouts) for name, layouts in datasets.items()]
    if len(rows) < 2:
        return rows
    if baseline is None:
        baseline = "random" if "random" in datasets else rows[0].method
    if baseline not in datasets:
        raise ValueError(f"baseline {baseline!r} not among {list(datasets)}")
    base = next(r for r in rows if r.method == baseline)
    return [
        MethodSummary(**{**asdict(r), "align_ratio": _ratio(r.align_mean, base.align_mean), "density_ratio": _ratio(r.density, base.density)})
        for r in rows
    ]


def report_json(rows: Sequence[MethodSummary]) -> str:
    return json.dumps({"methods": [asdict(r) for r in rows]}, indent=2) + "\n"


def report_text(rows: Sequence[MethodSummary]) -> str:
    header = ["method", "layouts", "elements", "align_mean", "align_sum", "density", "align_ratio", "density_ratio"]
    body = []
    for r in rows:
        body.append(
            [
                r.method,
                str(r.n_layouts),
                f"{r.mean_elements:.2f}",
                f"{r.align_mean:.6f}",
                f"{r.align_sum:.6f}",
                f"{r.density:.4f}",
                "-" if r.align_ratio is None else f"{r.align_ratio:.4f}",
                "-" if r.density_ratio is None else f"{r.density_ratio:.4f}",
            ]
        )
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))).rstrip() for row in [header] + body]
    return "\n".join(lines) + "\n"


def plot_report(rows: Sequence[MethodSummary], out_path) -> None:
    """Side-by-side bars of mean Align (lower is better) and Density."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [r.method for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7, 3))
    ax1.bar(names, [r.align_mean for r in rows], color="#4C72B0")
    ax1.set_title("Align (per element, lower is better)", fontsize=9)
    ax2.bar(names, [r.density for r in rows], color="#55A868")
    ax2.set_title("Density (higher is better)", fontsize=9)
    for ax in (ax1, ax2):
        ax.tick_params(labelsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100, metadata={"Software": None})
    plt.close(fig)
