"""Augmentation pipeline used to enlarge rare categories of an element pool.

Every stage draws the same random numbers whether or not it fires, so a
record's (seed, applied ops) pair replays bit-exactly against its parent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .pool import ElementPool, ElementRecord, _element_seed

log = logging.getLogger(__name__)

STAGES = ("hflip", "vflip", "bc", "crop", "edge", "elastic")


@dataclass(frozen=True)
class AugmentConfig:
    min_count: int = 100
    p_flip: float = 0.5
    p_bc: float = 0.5
    p_crop: float = 0.7
    p_edge: float = 0.2
    # elastic + noise carries no firing probability of its own upstream
    p_elastic: float = 1.0
    crop_area_range: tuple[float, float] = (0.5, 0.9)
    bc_delta: float = 0.2
    elastic_alpha: float = 8.0
    elastic_sigma: float = 4.0
    noise_std: float = 0.02

    def __post_init__(self):
        for name in ("p_flip", "p_bc", "p_crop", "p_edge", "p_elastic"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        lo, hi = self.crop_area_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop_area_range {self.crop_area_range} must satisfy 0 < low <= high <= 1")
        if self.min_count < 0:
            raise ValueError("min_count must be >= 0")


def sobel_edges(raster: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude of the grayscale image, scaled to [0, 255].

    Borders are replicate-padded; the result is float64 with the input's
    height and width. A constant image maps to all zeros.
    """
    arr = np.asarray(raster, dtype=np.float64)
    gray = arr @ np.array([0.299, 0.587, 0.114]) if arr.ndim == 3 else arr
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 0:
        return np.zeros_like(mag)
    return mag * (255.0 / peak)


def _crop_dims(w: int, h: int, frac: float, lo: float, hi: float):
    """Integer crop size near ``frac`` of the area with the aspect ratio kept.

    Returns None when no integer size lands inside [lo, hi] (tiny rasters).
    """
    total = w * h
    ideal_w = w * math.sqrt(frac)
    order = sorted(range(1, w + 1), key=lambda cw: (abs(cw - ideal_w), cw))
    for cw in order[:64]:
        ch_lo = max(1, math.ceil(lo * total / cw - 1e-9))
        ch_hi = min(h, math.floor(hi * total / cw + 1e-9))
        if ch_lo > ch_hi:
            continue
        ch = min(max(int(round(h * math.sqrt(frac))), ch_lo), ch_hi)
        if lo <= cw * ch / total <= hi:
            return cw, ch
    return None


def plan_augmentation(width: int, height: int, cfg: AugmentConfig, rng, force=None) -> list[dict]:
    """Draw the stage decisions and parameters for one augmented copy.

    ``force``, when given, is the exact set of stages to apply; the random
    draws are consumed identically either way.
    """
    probs = {
        "hflip": cfg.p_flip,
        "vflip": cfg.p_flip,
        "bc": cfg.p_bc,
        "crop": cfg.p_crop,
        "edge": cfg.p_edge,
        "elastic": cfg.p_elastic,
    }
    force = None if force is None else set(force)
    plan = []
    w, h = width, height
    for stage in STAGES:
        u = rng.random()
        fire = (stage in force) if force is not None else u < probs[stage]
        if stage == "bc":
            contrast = 1.0 + rng.uniform(-cfg.bc_delta, cfg.bc_delta)
            brightness = 255.0 * rng.uniform(-cfg.bc_delta, cfg.bc_delta)
            if fire:
                plan.append({"op": "bc", "contrast": contrast, "brightness": brightness})
        elif stage == "crop":
            frac = rng.uniform(*cfg.crop_area_range)
            px, py = rng.random(), rng.random()
            dims = _crop_dims(w, h, frac, *cfg.crop_area_range) if fire else None
            if dims is not None:
                cw, ch = dims
                x0 = min(int(px * (w - cw + 1)), w - cw)
                y0 = min(int(py * (h - ch + 1)), h - ch)
                plan.append({"op": "crop", "box": [x0, y0, cw, ch]})
                w, h = cw, ch
        elif stage == "elastic":
            sub = int(rng.integers(0, 2**32))
            if fire:
                plan.append({"op": "elastic", "seed": sub})
        elif fire:
            plan.append({"op": stage})
    return plan


def _elastic_noise(img: np.ndarray, cfg: AugmentConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    h, w = img.shape[:2]
    dx = ndimage.gaussian_filter(rng.uniform(-1, 1, size=(h, w)), cfg.elastic_sigma, mode="constant") * cfg.elastic_alpha
    dy = ndimage.gaussian_filter(rng.uniform(-1, 1, size=(h, w)), cfg.elastic_sigma, mode="constant") * cfg.elastic_alpha
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [yy + dy, xx + dx]
    out = np.stack([ndimage.map_coordinates(img[:, :, c], coords, order=1, mode="reflect") for c in range(3)], axis=2)
    out = out + rng.normal(0.0, cfg.noise_std * 255.0, size=out.shape)
    return out


def execute_plan(raster: np.ndarray, plan: list[dict], cfg: AugmentConfig) -> np.ndarray:
    img = np.asarray(raster, dtype=np.float64)
    for step in plan:
        op = step["op"]
        if op == "hflip":
            img = img[:, ::-1]
        elif op == "vflip":
            img = img[::-1, :]
        elif op == "bc":
            img = np.clip(img * step["contrast"] + step["brightness"], 0, 255)
        elif op == "crop":
            x0, y0, cw, ch = step["box"]
            img = img[y0 : y0 + ch, x0 : x0 + cw]
        elif op == "edge":
            img = np.repeat(sobel_edges(img)[:, :, None], 3, axis=2)
        elif op == "elastic":
            img = np.clip(_elastic_noise(img, cfg, step["seed"]), 0, 255)
        else:
            raise ValueError(f"unknown augmentation op {op!r}")
    return np.ascontiguousarray(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def _plan_dims(width, height, plan):
    for step in plan:
        if step["op"] == "crop":
            width, height = step["box"][2], step["box"][3]
    return width, height


def _augmented_record(parent: ElementRecord, new_id: str, cfg: AugmentConfig, seed: int, force=None) -> ElementRecord:
    plan = plan_augmentation(parent.width_px, parent.height_px, cfg, np.random.default_rng(seed), force=force)
    w, h = _plan_dims(parent.width_px, parent.height_px, plan)
    lineage = {"parent": parent.id, "ops": [s["op"] for s in plan], "seed": seed}
    return ElementRecord(
        id=new_id,
        category=parent.category,
        width_px=w,
        height_px=h,
        provenance=lineage,
        source=lambda: execute_plan(parent.raster, plan, cfg),
    )


def apply_augmentation(elem: ElementRecord, cfg: AugmentConfig, rng, force=None) -> ElementRecord:
    """Augmented copy of ``elem``: flip, brightness/contrast, crop, edge, elastic+noise.

    ``rng`` may be an int seed or a numpy Generator (one integer is drawn from
    it to seed the copy, which is what the lineage records).
    """
    seed = int(rng) if isinstance(rng, (int, np.integer)) else int(rng.integers(0, 2**32))
    rec = _augmented_record(elem, f"{elem.id}+aug{seed:010d}", cfg, seed, force=force)
    # materialize once so the copy no longer depends on the parent's source
    return ElementRecord.from_array(rec.id, rec.category, rec.raster, rec.provenance)


def replay_lineage(parent: ElementRecord, lineage: dict, cfg: AugmentConfig) -> np.ndarray:
    """Recompute an augmented raster from its parent and recorded lineage."""
    plan = plan_augmentation(parent.width_px, parent.height_px, cfg, np.random.default_rng(lineage["seed"]), force=lineage["ops"])
    return execute_plan(parent.raster, plan, cfg)


def augment_rare_categories(pool: ElementPool, cfg: AugmentConfig | None = None, seed: int = 0) -> ElementPool:
    """Pad every category below ``cfg.min_count`` originals with augmented copies.

    Parents are taken round-robin over the category's originals; each copy's
    seed depends only on (seed, parent id, copy index).
    """
    cfg = cfg or AugmentConfig()
    if len(pool) == 0:
        raise ValueError("cannot augment an empty pool")
    records = list(pool)
    for category, recs in pool.categories.items():
        originals = [r for r in recs if not r.is_augmented]
        missing = cfg.min_count - len(recs)
        if missing <= 0:
            continue
        if not originals:
            log.warning("category %r has no originals to augment", category)
            continue
        offset = len(recs) - len(originals)
        for k in range(offset, offset + missing):
            parent = originals[k % len(originals)]
            s = _element_seed(seed, parent.id, k)
            records.append(_augmented_record(parent, f"{parent.id}+aug{k:04d}", cfg, s))
    return ElementPool(records, page_spec_hint=pool.page_spec_hint)
