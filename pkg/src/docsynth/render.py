"""Page compositing and annotation / debug exports."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np
from PIL import Image

from .layout import GridCell, Layout
from .pool import ElementPool


@dataclass(frozen=True, eq=False)
class RenderedPage:
    raster: np.ndarray
    layout: Layout

    def save(self, path) -> None:
        Image.fromarray(self.raster).save(path, optimize=False)


def resize_raster(raster: np.ndarray, w: int, h: int) -> np.ndarray:
    """Box (area-average) filter when shrinking, nearest neighbour otherwise."""
    src_h, src_w = raster.shape[:2]
    if (src_w, src_h) == (w, h):
        return raster
    resample = Image.Resampling.BOX if w <= src_w and h <= src_h else Image.Resampling.NEAREST
    return np.asarray(Image.fromarray(raster).resize((w, h), resample=resample))


def compose_page(layout: Layout, pool: ElementPool) -> RenderedPage:
    """Paste every placed element, resized to its box, onto a white page."""
    page = np.full((layout.page.height_px, layout.page.width_px, 3), 255, dtype=np.uint8)
    for p in layout.placed:
        if p.element_id not in pool:
            raise KeyError(f"layout references element {p.element_id!r} missing from the pool")
        page[p.y : p.y + p.h, p.x : p.x + p.w] = resize_raster(pool[p.element_id].raster, p.w, p.h)
    return RenderedPage(page, layout)


def painted_boxes(rendered: RenderedPage) -> list[list[int]]:
    """[x, y, w, h] boxes actually written by ``compose_page``, in paint order."""
    return [[p.x, p.y, p.w, p.h] for p in rendered.layout.placed]


def category_vocabulary(layouts: Sequence[Layout], pool: ElementPool | None = None) -> list[str]:
    names = set(pool.categories) if pool is not None else set()
    names.update(p.category for l in layouts for p in l.placed)
    return sorted(names)


def coco_document(layouts: Sequence[Layout], categories: Sequence[str] | None = None, file_pattern: str = "{:06d}.png") -> dict:
    categories = list(categories) if categories is not None else category_vocabulary(layouts)
    cat_id = {name: i + 1 for i, name in enumerate(categories)}
    images, anns = [], []
    for i, layout in enumerate(layouts):
        images.append({"id": i + 1, "file_name": file_pattern.format(i), "width": layout.page.width_px, "height": layout.page.height_px})
        for p in layout.placed:
            if p.category not in cat_id:
                raise ValueError(f"category {p.category!r} outside the export vocabulary")
            anns.append(
                {
                    "id": len(anns) + 1,
                    "image_id": i + 1,
                    "category_id": cat_id[p.category],
                    "bbox": [p.x, p.y, p.w, p.h],
                    "area": p.w * p.h,
                    "iscrowd": 0,
                }
            )
    return {
        "images": images,
        "annotations": anns,
        "categories": [{"id": cat_id[n], "name": n} for n in categories],
    }


def export_coco(layouts: Sequence[Layout], out_path, categories: Sequence[str] | None = None, file_pattern: str = "{:06d}.png") -> Path:
    """Write all layouts as one COCO detection file; output bytes are deterministic."""
    out_path = Path(out_path)
    doc = coco_document(layouts, categories, file_pattern)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(doc, indent=1) + "\n")
    return out_path


def category_color(name: str) -> str:
    h = zlib.crc32(name.encode())
    # keep colours mid-bright so labels stay readable
    r, g, b = (60 + ((h >> s) & 0xFF) * 150 // 255 for s in (0, 8, 16))
    return f"#{r:02x}{g:02x}{b:02x}"


def svg_debug(layout: Layout, cells: Sequence[GridCell] | None = None) -> str:
    W, H = layout.page.width_px, layout.page.height_px
    m = layout.page.margin_px
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect class="page" x="0" y="0" width="{W}" height="{H}" fill="white" stroke="black"/>',
        f'<rect class="interior" x="{m}" y="{m}" width="{W - 2 * m}" height="{H - 2 * m}" fill="none" stroke="#bbbbbb"/>',
    ]
    for c in cells or ():
        out.append(
            f'<rect class="cell" x="{c.x}" y="{c.y}" width="{c.w}" height="{c.h}" fill="none" '
            f'stroke="#888888" stroke-dasharray="6,4"/>'
        )
    for i, p in enumerate(layout.placed):
        color = category_color(p.category)
        out.append(
            f'<rect class="element" x="{p.x}" y="{p.y}" width="{p.w}" height="{p.h}" '
            f'fill="{color}" fill-opacity="0.45" stroke="{color}"/>'
        )
        out.append(f'<text x="{p.x + 4}" y="{p.y + 16}" font-size="14" font-family="monospace">{i}:{escape(p.category)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_svg_debug(layout: Layout, out_path, cells: Sequence[GridCell] | None = None) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(svg_debug(layout, cells))
    return out_path
