"""Category-wise element pool: ingestion, synthetic corpora and persistence."""

from __future__ import annotations

import json
import logging
import math
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

DEFAULT_PAGE = (1240, 1754)


class PoolError(Exception):
    """Raised when a pool cannot be built or read."""


@dataclass(frozen=True, eq=False)
class ElementRecord:
    """A cropped document element.

    The pixels are not held in memory; ``source`` produces them on demand
    (crop from a page image, PNG on disk, procedural drawing or augmentation
    replay) so pools of thousands of elements stay cheap.
    """

    id: str
    category: str
    width_px: int
    height_px: int
    provenance: dict
    source: Callable[[], np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError(f"element {self.id}: non-positive size {self.width_px}x{self.height_px}")

    @property
    def area(self) -> int:
        return self.width_px * self.height_px

    @property
    def raster(self) -> np.ndarray:
        arr = self.source()
        if arr.shape != (self.height_px, self.width_px, 3):
            raise PoolError(
                f"element {self.id}: raster {arr.shape} does not match declared "
                f"{self.width_px}x{self.height_px}"
            )
        return arr

    @property
    def is_augmented(self) -> bool:
        return "parent" in self.provenance

    @classmethod
    def from_array(cls, id: str, category: str, raster: np.ndarray, provenance: dict | None = None):
        raster = np.ascontiguousarray(raster, dtype=np.uint8)
        if raster.ndim == 2:
            raster = np.repeat(raster[:, :, None], 3, axis=2)
        h, w = raster.shape[:2]
        raster.setflags(write=False)
        return cls(id, category, w, h, dict(provenance or {}), lambda: raster)


class ElementPool:
    """Immutable mapping of category -> element records."""

    def __init__(self, records: Sequence[ElementRecord], page_spec_hint: tuple[int, int] | None = None):
        cats: dict[str, list[ElementRecord]] = {}
        seen = set()
        for rec in records:
            if rec.id in seen:
                raise PoolError(f"duplicate element id {rec.id!r}")
            seen.add(rec.id)
            cats.setdefault(rec.category, []).append(rec)
        self._categories = {c: tuple(sorted(v, key=lambda r: r.id)) for c, v in sorted(cats.items())}
        self._by_id = {r.id: r for v in self._categories.values() for r in v}
        self.page_spec_hint = page_spec_hint

    @property
    def categories(self) -> Mapping[str, tuple[ElementRecord, ...]]:
        return self._categories

    def __len__(self):
        return len(self._by_id)

    def __iter__(self) -> Iterator[ElementRecord]:
        for recs in self._categories.values():
            yield from recs

    def __getitem__(self, element_id: str) -> ElementRecord:
        try:
            return self._by_id[element_id]
        except KeyError:
            raise KeyError(f"element id {element_id!r} not in pool") from None

    def __contains__(self, element_id):
        return element_id in self._by_id

    def counts(self) -> dict[str, int]:
        return {c: len(v) for c, v in self._categories.items()}


# --------------------------------------------------------------------------
# COCO manifests


def read_coco(path) -> dict:
    """Parse a COCO manifest into ``{image_id: (image_entry, [(category, bbox), ...])}``."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PoolError(f"cannot read manifest {path}: {exc}") from exc
    for key in ("images", "annotations", "categories"):
        if key not in data:
            raise PoolError(f"manifest {path} lacks {key!r}")
    names = {c["id"]: c["name"] for c in data["categories"]}
    out = {img["id"]: (img, []) for img in data["images"]}
    for ann in data["annotations"]:
        if ann["image_id"] not in out:
            raise PoolError(f"annotation {ann.get('id')} references unknown image {ann['image_id']}")
        out[ann["image_id"]][1].append((names[ann["category_id"]], [float(v) for v in ann["bbox"]], ann.get("id")))
    return out


def _crop_source(image_path: Path, box: tuple[int, int, int, int]):
    def load():
        with Image.open(image_path) as im:
            return np.asarray(im.convert("RGB").crop(box), dtype=np.uint8)

    return load


def load_pool(manifest_path, image_dir=None) -> ElementPool:
    """Build a pool with one element per annotation of a COCO manifest.

    Images are resolved relative to ``image_dir`` (default: the manifest's
    directory). Boxes that leave the image are skipped and counted.
    """
    manifest_path = Path(manifest_path)
    image_dir = Path(image_dir) if image_dir is not None else manifest_path.parent
    entries = read_coco(manifest_path)
    records = []
    skipped = 0
    sizes = []
    for image_id in sorted(entries, key=str):
        img, anns = entries[image_id]
        image_path = image_dir / img["file_name"]
        try:
            with Image.open(image_path) as im:
                im.load()
                width, height = im.size
        except (OSError, UnidentifiedImageError) as exc:
            raise PoolError(f"cannot read image {image_path}: {exc}") from exc
        sizes.append((width, height))
        for k, (category, (x, y, w, h), ann_id) in enumerate(anns):
            x0, y0 = int(round(x)), int(round(y))
            x1, y1 = int(round(x + w)), int(round(y + h))
            if x0 < 0 or y0 < 0 or x1 > width or y1 > height or x1 <= x0 or y1 <= y0:
                skipped += 1
                continue
            ann_key = ann_id if ann_id is not None else f"{image_id}_{k}"
            records.append(
                ElementRecord(
                    id=f"e{ann_key}",
                    category=category,
                    width_px=x1 - x0,
                    height_px=y1 - y0,
                    provenance={"page": str(img["file_name"]), "bbox": [x0, y0, x1 - x0, y1 - y0]},
                    source=_crop_source(image_path, (x0, y0, x1, y1)),
                )
            )
    if skipped:
        log.warning("skipped %d annotation(s) with boxes outside their image", skipped)
    if not records:
        raise PoolError(f"manifest {manifest_path} yields no usable elements")
    hint = max(set(sizes), key=sizes.count) if sizes else None
    pool = ElementPool(records, page_spec_hint=hint)
    pool.skipped = skipped
    return pool


# --------------------------------------------------------------------------
# Synthetic corpora

# name, drawing style, width range, height range (px at the default page size)
CATEGORY_TEMPLATES = [
    ("paragraph", "text", (280, 1100), (60, 420)),
    ("title", "text", (240, 900), (36, 80)),
    ("table", "table", (400, 1100), (160, 600)),
    ("figure", "figure", (280, 1000), (180, 600)),
    ("caption", "text", (240, 800), (30, 100)),
    ("list", "text", (280, 900), (90, 380)),
    ("header", "text", (160, 700), (24, 50)),
    ("footer", "text", (160, 700), (24, 50)),
    ("formula", "text", (160, 600), (40, 120)),
    ("chart", "figure", (300, 900), (200, 520)),
    ("code", "table", (320, 1000), (100, 380)),
    ("page_number", "text", (24, 80), (20, 36)),
]


def _tint(category: str) -> np.ndarray:
    h = zlib.crc32(category.encode())
    return np.array([(h >> s) & 0xFF for s in (0, 8, 16)], dtype=np.float64)


def draw_element(style: str, category: str, width: int, height: int, seed: int) -> np.ndarray:
    """Procedurally draw a text-, table- or figure-like raster."""
    rng = np.random.default_rng(seed)
    tint = _tint(category)
    img = np.full((height, width, 3), 255.0)
    ink = 0.35 * tint
    if style == "text":
        line_h = max(2, int(rng.integers(10, 22)))
        y = int(rng.integers(2, 8))
        while y + line_h // 2 < height:
            x = int(rng.integers(2, 10))
            end = width - int(rng.integers(2, max(3, width // 5)))
            while x < end:
                word = int(rng.integers(12, 60))
                img[y : y + max(1, line_h // 2), x : min(x + word, end)] = ink
                x += word + int(rng.integers(6, 12))
            y += line_h
    elif style == "table":
        rows = int(rng.integers(2, 12))
        cols = int(rng.integers(2, 7))
        img[:, :] = 255.0 - 0.08 * (255.0 - tint)
        for r in np.linspace(0, height - 1, rows + 1).astype(int):
            img[r : r + 2, :] = ink
        for c in np.linspace(0, width - 1, cols + 1).astype(int):
            img[:, c : c + 2] = ink
    else:
        yy, xx = np.mgrid[0:height, 0:width]
        phase = rng.uniform(0, 2 * np.pi, size=2)
        field_ = 0.5 + 0.25 * (np.sin(xx / max(width, 1) * 6 + phase[0]) + np.cos(yy / max(height, 1) * 5 + phase[1]))
        img = tint[None, None, :] * field_[:, :, None] + 255.0 * (1 - field_[:, :, None]) * 0.6
        for _ in range(int(rng.integers(1, 4))):
            cx, cy = rng.uniform(0, width), rng.uniform(0, height)
            rad = rng.uniform(0.1, 0.35) * min(width, height)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < rad**2
            img[mask] = 255.0 - tint
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _element_seed(master: int, *parts) -> int:
    words = [int(master) & 0xFFFFFFFF]
    for p in parts:
        words.append(zlib.crc32(p.encode()) if isinstance(p, str) else int(p) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def _log_uniform_int(rng, lo: int, hi: int) -> int:
    # element sizes in real pages are heavy-tailed towards small boxes
    if lo == hi:
        return int(lo)
    v = math.exp(rng.uniform(math.log(lo), math.log(hi + 1)))
    return int(min(max(math.floor(v), lo), hi))


def make_synthetic_pool(
    n_categories: int = 12,
    per_category: int = 25,
    size_ranges=None,
    seed: int = 0,
    page_size: tuple[int, int] = DEFAULT_PAGE,
    margin_px: int = 24,
) -> ElementPool:
    """Generate a deterministic pool of procedurally drawn elements.

    Args:
        n_categories: Number of categories; names cycle through
            ``CATEGORY_TEMPLATES`` with a numeric suffix past the first twelve.
        per_category: Elements per category.
        size_ranges: ``None`` for the per-category template ranges, a single
            ``((wmin, wmax), (hmin, hmax))`` applied to every category, or an
            exact ``(w, h)``.
        seed: Master seed.
        page_size: Page the elements must fit (minus margins).
    """
    if n_categories < 1 or per_category < 1:
        raise ValueError("category and per-category counts must be >= 1")
    max_w = page_size[0] - 2 * margin_px
    max_h = page_size[1] - 2 * margin_px
    if size_ranges is not None and np.ndim(size_ranges[0]) == 0:
        size_ranges = ((size_ranges[0], size_ranges[0]), (size_ranges[1], size_ranges[1]))
    rng = np.random.default_rng(seed)
    records = []
    for c in range(n_categories):
        name, style, wr, hr = CATEGORY_TEMPLATES[c % len(CATEGORY_TEMPLATES)]
        if c >= len(CATEGORY_TEMPLATES):
            name = f"{name}_{c // len(CATEGORY_TEMPLATES)}"
        if size_ranges is not None:
            wr, hr = size_ranges
        if wr[1] > max_w or hr[1] > max_h or wr[0] < 1 or hr[0] < 1 or wr[0] > wr[1] or hr[0] > hr[1]:
            raise ValueError(f"size range {wr}x{hr} does not fit the {max_w}x{max_h} page interior")
        for k in range(per_category):
            w = _log_uniform_int(rng, *wr)
            h = _log_uniform_int(rng, *hr)
            eid = f"c{c:02d}_{k:04d}"
            esd = _element_seed(seed, eid)
            records.append(
                ElementRecord(
                    id=eid,
                    category=name,
                    width_px=w,
                    height_px=h,
                    provenance={"page": "synthetic", "style": style, "seed": esd},
                    source=(lambda s=style, n=name, w=w, h=h, esd=esd: draw_element(s, n, w, h, esd)),
                )
            )
    return ElementPool(records, page_spec_hint=tuple(page_size))


def parse_synthetic_spec(text: str) -> tuple[int, int]:
    """``"12x25"`` -> ``(12, 25)``."""
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise ValueError(f"synthetic spec must look like CATSxCOUNT, got {text!r}") from None


# --------------------------------------------------------------------------
# Pool directories: pool.json + elements/<id>.png


def save_pool(pool: ElementPool, out_dir) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "elements").mkdir(parents=True, exist_ok=True)
    index = []
    for rec in pool:
        fname = f"elements/{rec.id}.png"
        Image.fromarray(rec.raster).save(out_dir / fname, optimize=False)
        index.append(
            {
                "id": rec.id,
                "category": rec.category,
                "width_px": rec.width_px,
                "height_px": rec.height_px,
                "file": fname,
                "provenance": rec.provenance,
            }
        )
    doc = {"page_spec_hint": list(pool.page_spec_hint) if pool.page_spec_hint else None, "elements": index}
    path = out_dir / "pool.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def _png_source(path: Path):
    def load():
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)

    return load


def read_pool_dir(pool_dir) -> ElementPool:
    pool_dir = Path(pool_dir)
    index_path = pool_dir / "pool.json" if pool_dir.is_dir() else pool_dir
    try:
        doc = json.loads(index_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PoolError(f"cannot read pool index {index_path}: {exc}") from exc
    base = index_path.parent
    records = []
    for e in doc["elements"]:
        path = base / e["file"]
        if not os.path.exists(path):
            raise PoolError(f"missing element image {path}")
        records.append(
            ElementRecord(e["id"], e["category"], int(e["width_px"]), int(e["height_px"]), e["provenance"], _png_source(path))
        )
    if not records:
        raise PoolError(f"pool {index_path} is empty")
    hint = doc.get("page_spec_hint")
    return ElementPool(records, page_spec_hint=tuple(hint) if hint else None)
