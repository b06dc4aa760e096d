"""Mesh-candidate BestFit layout synthesis and the random-placement baseline."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .pool import ElementPool, ElementRecord

log = logging.getLogger(__name__)


class LayoutError(Exception):
    pass


@dataclass(frozen=True)
class PageSpec:
    width_px: int = 1240
    height_px: int = 1754
    margin_px: int = 24

    def __post_init__(self):
        if self.width_px <= 2 * self.margin_px or self.height_px <= 2 * self.margin_px:
            raise ValueError(f"page {self.width_px}x{self.height_px} too small for margin {self.margin_px}")
        if self.margin_px < 0:
            raise ValueError("margin must be >= 0")

    @property
    def interior(self) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1) of the usable area."""
        m = self.margin_px
        return m, m, self.width_px - m, self.height_px - m

    @property
    def interior_size(self) -> tuple[int, int]:
        return self.width_px - 2 * self.margin_px, self.height_px - 2 * self.margin_px

    @property
    def area(self) -> int:
        return self.width_px * self.height_px


@dataclass(frozen=True)
class PlacedElement:
    element_id: str
    category: str
    x: int
    y: int
    w: int
    h: int
    scale: float = 1.0

    @property
    def x1(self):
        return self.x + self.w

    @property
    def y1(self):
        return self.y + self.h

    @property
    def area(self):
        return self.w * self.h


@dataclass(frozen=True)
class Layout:
    page: PageSpec
    placed: tuple[PlacedElement, ...] = ()
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "page": asdict(self.page),
            "seed": self.seed,
            "placed": [
                {
                    "element_id": p.element_id,
                    "category": p.category,
                    "x": p.x,
                    "y": p.y,
                    "w": p.w,
                    "h": p.h,
                    "scale": p.scale,
                }
                for p in self.placed
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Layout":
        page = PageSpec(**d["page"])
        placed = tuple(
            PlacedElement(p["element_id"], p["category"], int(p["x"]), int(p["y"]), int(p["w"]), int(p["h"]), float(p["scale"]))
            for p in d["placed"]
        )
        return cls(page, placed, d.get("seed"))

    @classmethod
    def from_json(cls, text: str) -> "Layout":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, order=True)
class GridCell:
    x: int
    y: int
    w: int
    h: int

    @property
    def area(self):
        return self.w * self.h


@dataclass(frozen=True)
class EngineConfig:
    """Knobs of the BestFit loop.

    ``n_max``, ``fr_thr`` and ``mini_num`` default to the published values
    (15 elements, 1e-4, 5 small elements).
    """

    n_max: int = 15
    fr_thr: float = 1e-4
    mini_num: int = 5
    small_area_frac: float = 0.02
    candidate_set_size: int = 30
    strata: int = 3
    scale_range: tuple[float, float] = (0.85, 1.0)
    gutter_px: int = 6
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fr_thr <= 1.0:
            raise ValueError(f"fr_thr={self.fr_thr} must be in (0, 1]")
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"scale_range {self.scale_range} must lie within (0, 1]")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.candidate_set_size < 1 or self.strata < 1:
            raise ValueError("candidate_set_size and strata must be >= 1")
        if self.gutter_px < 0 or self.mini_num < 0:
            raise ValueError("gutter_px and mini_num must be >= 0")


# --------------------------------------------------------------------------
# geometry helpers


def interior_overlap(a, b) -> int:
    """Area of the open intersection of two boxes exposing x, y, w, h."""
    ox = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    oy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    return ox * oy if ox > 0 and oy > 0 else 0


def fits_page(elem: ElementRecord, page: PageSpec) -> bool:
    iw, ih = page.interior_size
    return elem.width_px <= iw and elem.height_px <= ih


def is_small(w: int, h: int, page: PageSpec, cfg: EngineConfig) -> bool:
    iw, ih = page.interior_size
    return w * h < cfg.small_area_frac * iw * ih


def _as_rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


# --------------------------------------------------------------------------
# candidate sampling


def area_strata(elements: Sequence[ElementRecord], n_strata: int = 3) -> list[list[ElementRecord]]:
    """Split elements into area quantile groups (ties broken by id)."""
    ordered = sorted(elements, key=lambda e: (e.area, e.id))
    return [list(chunk) for chunk in np.array_split(np.array(ordered, dtype=object), n_strata)]


def _quotas(sizes: list[int], total: int) -> list[int]:
    quotas = [0] * len(sizes)
    remaining = total
    # round-robin keeps the draw as even as stratum sizes allow
    while remaining > 0:
        progressed = False
        for i, s in enumerate(sizes):
            if remaining and quotas[i] < s:
                quotas[i] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            break
    return quotas


def sample_candidate_set(pool: ElementPool, cfg: EngineConfig, rng, page: PageSpec | None = None) -> list[ElementRecord]:
    """Stratified-by-area sample of ``cfg.candidate_set_size`` distinct elements.

    With ``page`` given, elements too large for its interior are left out.
    """
    rng = _as_rng(rng)
    elements = list(pool)
    if page is not None:
        eligible = [e for e in elements if fits_page(e, page)]
        if len(eligible) < len(elements):
            log.warning("%d element(s) exceed the page interior and are never sampled", len(elements) - len(eligible))
        elements = eligible
    if not elements:
        raise LayoutError("no pool element fits the page")
    if len(elements) <= cfg.candidate_set_size:
        if len(elements) < cfg.candidate_set_size:
            log.warning("pool has %d eligible elements, fewer than candidate_set_size=%d", len(elements), cfg.candidate_set_size)
        return sorted(elements, key=lambda e: (e.area, e.id))
    strata = area_strata(elements, cfg.strata)
    quotas = _quotas([len(s) for s in strata], cfg.candidate_set_size)
    chosen = []
    for stratum, q in zip(strata, quotas):
        if q:
            idx = np.sort(rng.choice(len(stratum), size=q, replace=False))
            chosen.extend(stratum[i] for i in idx)
    return chosen


# --------------------------------------------------------------------------
# BestFit steps


def seed_layout(page: PageSpec, candidate: ElementRecord, rng, seed: int | None = None) -> Layout:
    """Layout holding ``candidate`` at a uniformly random valid position."""
    rng = _as_rng(rng)
    x0, y0, x1, y1 = page.interior
    w, h = candidate.width_px, candidate.height_px
    if w > x1 - x0 or h > y1 - y0:
        raise LayoutError(f"element {candidate.id} ({w}x{h}) larger than page interior {x1 - x0}x{y1 - y0}")
    x = int(rng.integers(x0, x1 - w + 1))
    y = int(rng.integers(y0, y1 - h + 1))
    return Layout(page, (PlacedElement(candidate.id, candidate.category, x, y, w, h),), seed)


def _grid_lines(layout: Layout):
    x0, y0, x1, y1 = layout.page.interior
    xs = {x0, x1}
    ys = {y0, y1}
    for p in layout.placed:
        xs.update((p.x, p.x1))
        ys.update((p.y, p.y1))
    return np.array(sorted(xs), dtype=np.int64), np.array(sorted(ys), dtype=np.int64)


def _free_rectangles(layout: Layout, gutter: int, min_w: int = 1, min_h: int = 1):
    """Vectorised meshgrid: arrays x, y, w, h of all free rectangles.

    A rectangle spanning grid lines [a, b] x [c, d] is free when none of the
    elementary cells it covers is occupied (summed-area table lookup).
    """
    xs, ys = _grid_lines(layout)
    nx, ny = len(xs) - 1, len(ys) - 1
    occ = np.zeros((nx, ny), dtype=np.int64)
    for p in layout.placed:
        i0, i1 = np.searchsorted(xs, [p.x, p.x1])
        j0, j1 = np.searchsorted(ys, [p.y, p.y1])
        occ[i0:i1, j0:j1] = 1
    sat = np.zeros((nx + 1, ny + 1), dtype=np.int64)
    sat[1:, 1:] = occ.cumsum(0).cumsum(1)

    ia, ib = np.triu_indices(nx + 1, k=1)
    jc, jd = np.triu_indices(ny + 1, k=1)
    cw = xs[ib] - xs[ia] - 2 * gutter
    ch = ys[jd] - ys[jc] - 2 * gutter
    keep_x = cw >= min_w
    keep_y = ch >= min_h
    ia, ib, cw = ia[keep_x], ib[keep_x], cw[keep_x]
    jc, jd, ch = jc[keep_y], jd[keep_y], ch[keep_y]
    covered = (
        sat[ib[:, None], jd[None, :]]
        - sat[ia[:, None], jd[None, :]]
        - sat[ib[:, None], jc[None, :]]
        + sat[ia[:, None], jc[None, :]]
    )
    xi, yi = np.nonzero(covered == 0)
    return xs[ia[xi]] + gutter, ys[jc[yi]] + gutter, cw[xi], ch[yi]


def build_meshgrid(layout: Layout, cfg: EngineConfig | None = None) -> list[GridCell]:
    """Empty rectangles over the grid lines induced by the placed elements.

    Every rectangle between two distinct vertical and two distinct horizontal
    lines (interior border plus element edges) that overlaps no element is
    returned, shrunk by the gutter on each side; cells left without positive
    area are dropped.
    """
    cfg = cfg or EngineConfig()
    if not layout.placed:
        raise LayoutError("meshgrid needs at least one placed element")
    x, y, w, h = _free_rectangles(layout, cfg.gutter_px)
    return sorted(GridCell(int(a), int(b), int(c), int(d)) for a, b, c, d in zip(x, y, w, h))


def fill_rate(candidate, cell) -> float | None:
    """Candidate area over cell area, or None when the candidate does not fit."""
    cw, ch = _dims(candidate)
    if cw > cell.w or ch > cell.h:
        return None
    return (cw * ch) / (cell.w * cell.h)


def _dims(c):
    if isinstance(c, ElementRecord):
        return c.width_px, c.height_px
    return c.w, c.h


def _best_fit_arrays(cands: Sequence[ElementRecord], x, y, w, h):
    """Index of best (candidate, cell) and its fill rate, or None."""
    if len(cands) == 0 or len(x) == 0:
        return None
    cw = np.array([c.width_px for c in cands], dtype=np.int64)
    chh = np.array([c.height_px for c in cands], dtype=np.int64)
    fits = (cw[:, None] <= w[None, :]) & (chh[:, None] <= h[None, :])
    if not fits.any():
        return None
    ci, gi = np.nonzero(fits)
    cell_area = w[gi] * h[gi]
    fr = (cw[ci] * chh[ci]) / cell_area
    id_rank = np.empty(len(cands), dtype=np.int64)
    id_rank[np.argsort(np.array([c.id for c in cands]), kind="stable")] = np.arange(len(cands))
    # lexsort: last key is primary
    order = np.lexsort((h[gi], w[gi], y[gi], x[gi], id_rank[ci], cell_area, -fr))
    k = order[0]
    return int(ci[k]), int(gi[k]), float(fr[k])


def best_fit_search(candidates: Sequence[ElementRecord], cells: Sequence[GridCell]):
    """Pair with the highest fill rate as ``(candidate, cell, fr)``, or None.

    Ties go to the smaller cell, then the lower candidate id, then the cell
    position ``(x, y, w, h)``.
    """
    if not cells:
        return None
    x = np.array([c.x for c in cells], dtype=np.int64)
    y = np.array([c.y for c in cells], dtype=np.int64)
    w = np.array([c.w for c in cells], dtype=np.int64)
    h = np.array([c.h for c in cells], dtype=np.int64)
    hit = _best_fit_arrays(candidates, x, y, w, h)
    if hit is None:
        return None
    ci, gi, fr = hit
    return candidates[ci], cells[gi], fr


def place(layout: Layout, candidate: ElementRecord, cell: GridCell) -> Layout:
    """Insert ``candidate`` at the top-left corner of ``cell``."""
    if fill_rate(candidate, cell) is None:
        raise LayoutError(f"element {candidate.id} ({candidate.width_px}x{candidate.height_px}) does not fit cell {cell}")
    new = PlacedElement(candidate.id, candidate.category, cell.x, cell.y, candidate.width_px, candidate.height_px)
    for p in layout.placed:
        if interior_overlap(p, new):
            raise LayoutError(f"cell {cell} overlaps placed element {p.element_id}")
    return replace(layout, placed=layout.placed + (new,))


def apply_central_scaling(layout: Layout, cfg: EngineConfig, rng) -> Layout:
    """Shrink every element about its own centre by an independent factor.

    The factor is drawn uniformly from ``cfg.scale_range`` (shrink-only, so
    disjoint boxes stay disjoint).
    """
    rng = _as_rng(rng)
    lo, hi = cfg.scale_range
    out = []
    for p in layout.placed:
        s = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
        if s == 1.0:
            out.append(replace(p, scale=1.0))
            continue
        nw = max(1, int(round(p.w * s)))
        nh = max(1, int(round(p.h * s)))
        out.append(replace(p, x=p.x + (p.w - nw) // 2, y=p.y + (p.h - nh) // 2, w=nw, h=nh, scale=s))
    return replace(layout, placed=tuple(out))


def next_placement(layout: Layout, candidates: Sequence[ElementRecord], cfg: EngineConfig):
    """Best (candidate, cell, fill rate) for the current layout, or None.

    Same result as ``best_fit_search(candidates, build_meshgrid(layout, cfg))``;
    cells narrower or shorter than every candidate are skipped up front.
    """
    if not candidates:
        return None
    min_w = min(c.width_px for c in candidates)
    min_h = min(c.height_px for c in candidates)
    x, y, w, h = _free_rectangles(layout, cfg.gutter_px, min_w, min_h)
    hit = _best_fit_arrays(candidates, x, y, w, h)
    if hit is None:
        return None
    ci, gi, fr = hit
    return candidates[ci], GridCell(int(x[gi]), int(y[gi]), int(w[gi]), int(h[gi])), fr


# --------------------------------------------------------------------------
# full generators


def generate_layout(pool: ElementPool, page: PageSpec | None = None, cfg: EngineConfig | None = None, seed: int | None = None) -> Layout:
    """One Mesh-candidate BestFit page.

    Seeds the page with a random candidate, then repeatedly builds the
    meshgrid and inserts the best-fitting (candidate, cell) pair until
    ``n_max`` elements are placed, the candidates run out, nothing fits or
    the best fill rate drops under ``fr_thr``. Small candidates stop being
    eligible once ``mini_num`` small elements are on the page. Central
    scaling is applied last.
    """
    page = page or PageSpec()
    cfg = cfg or EngineConfig()
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    cands = sample_candidate_set(pool, cfg, rng, page)
    first = cands.pop(int(rng.integers(len(cands))))
    layout = seed_layout(page, first, rng, seed)
    n_small = int(is_small(first.width_px, first.height_px, page, cfg))

    while len(layout.placed) < cfg.n_max and cands:
        eligible = [c for c in cands if n_small < cfg.mini_num or not is_small(c.width_px, c.height_px, page, cfg)]
        hit = next_placement(layout, eligible, cfg)
        if hit is None or hit[2] < cfg.fr_thr:
            break
        best, cell, _ = hit
        layout = place(layout, best, cell)
        cands.remove(best)
        n_small += is_small(best.width_px, best.height_px, page, cfg)

    return apply_central_scaling(layout, cfg, rng)


def generate_random_layout(pool: ElementPool, page: PageSpec | None = None, cfg: EngineConfig | None = None, seed: int | None = None) -> Layout:
    """Baseline: candidates dropped at uniform positions, overlaps allowed.

    Shares candidate sampling and the ``n_max`` budget with BestFit; the
    element count is uniform on ``1..min(n_max, |candidates|)``.
    """
    page = page or PageSpec()
    cfg = cfg or EngineConfig()
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    cands = sample_candidate_set(pool, cfg, rng, page)
    n = int(rng.integers(1, min(cfg.n_max, len(cands)) + 1))
    picks = rng.choice(len(cands), size=n, replace=False)
    x0, y0, x1, y1 = page.interior
    placed = []
    for i in picks:
        c = cands[int(i)]
        x = int(rng.integers(x0, x1 - c.width_px + 1))
        y = int(rng.integers(y0, y1 - c.height_px + 1))
        placed.append(PlacedElement(c.id, c.category, x, y, c.width_px, c.height_px))
    return Layout(page, tuple(placed), seed)


METHODS = {"bestfit": generate_layout, "random": generate_random_layout}


def derive_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master) & 0xFFFFFFFF, int(index)]).generate_state(1)[0])


def generate_dataset(
    pool: ElementPool,
    page: PageSpec | None = None,
    cfg: EngineConfig | None = None,
    count: int = 1,
    method: str = "bestfit",
    threads: int = 1,
) -> list[Layout]:
    """``count`` layouts; layout ``i`` uses ``derive_seed(cfg.seed, i)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    try:
        fn = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}") from None
    page = page or PageSpec()
    cfg = cfg or EngineConfig()
    seeds = [derive_seed(cfg.seed, i) for i in range(count)]
    if threads <= 1:
        return [fn(pool, page, cfg, s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda s: fn(pool, page, cfg, s), seeds))


def check_layout(layout: Layout, cfg: EngineConfig | None = None, allow_overlap: bool = False, pool: ElementPool | None = None) -> list[str]:
    """Human-readable invariant violations (empty when the layout is valid).

    Smallness is judged on unscaled element sizes, looked up in ``pool`` when
    given and otherwise recovered from the recorded scale factor.
    """
    cfg = cfg or EngineConfig()
    problems = []
    x0, y0, x1, y1 = layout.page.interior
    if len(layout.placed) > cfg.n_max:
        problems.append(f"{len(layout.placed)} elements exceed n_max={cfg.n_max}")
    for p in layout.placed:
        if p.w < 1 or p.h < 1:
            problems.append(f"{p.element_id}: empty box")
        if p.x < x0 or p.y < y0 or p.x1 > x1 or p.y1 > y1:
            problems.append(f"{p.element_id}: outside page interior")
    if not allow_overlap:
        def unscaled(p):
            if pool is not None:
                e = pool[p.element_id]
                return e.width_px, e.height_px
            return round(p.w / p.scale), round(p.h / p.scale)

        n_small = sum(is_small(*unscaled(p), layout.page, cfg) for p in layout.placed)
        if n_small > cfg.mini_num:
            problems.append(f"{n_small} small elements exceed mini_num={cfg.mini_num}")
        for i, a in enumerate(layout.placed):
            for b in layout.placed[i + 1 :]:
                if interior_overlap(a, b):
                    problems.append(f"{a.element_id} overlaps {b.element_id}")
    return problems
