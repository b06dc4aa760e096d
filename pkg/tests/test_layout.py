import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from docsynth.layout import (
    EngineConfig,
    GridCell,
    Layout,
    LayoutError,
    PageSpec,
    PlacedElement,
    apply_central_scaling,
    area_strata,
    best_fit_search,
    build_meshgrid,
    check_layout,
    derive_seed,
    fill_rate,
    generate_dataset,
    generate_layout,
    generate_random_layout,
    is_small,
    next_placement,
    place,
    sample_candidate_set,
    seed_layout,
)
from docsynth.pool import ElementPool, ElementRecord, make_synthetic_pool

from oracles import brute_force_cells, exhaustive_best_fit, pairwise_overlap_area, sort_and_split_strata


def el(id, w, h, category="c"):
    return ElementRecord(id, category, w, h, {}, lambda: np.zeros((h, w, 3), dtype=np.uint8))


def boxes(layout):
    return [(p.x, p.y, p.w, p.h) for p in layout.placed]


def cell_tuples(cells):
    return sorted((c.x, c.y, c.w, c.h) for c in cells)


# ---------------------------------------------------------------- sampling


def test_stratified_sample_is_even(reference_pool):
    cfg = EngineConfig(candidate_set_size=30)
    strata = sort_and_split_strata(list(reference_pool), 3)
    for seed in range(5):
        cands = sample_candidate_set(reference_pool, cfg, seed)
        ids = [c.id for c in cands]
        assert len(ids) == len(set(ids)) == 30
        assert [len(s & set(ids)) for s in strata] == [10, 10, 10]


def test_area_strata_matches_sort_and_split(reference_pool):
    got = [{e.id for e in s} for s in area_strata(list(reference_pool), 3)]
    assert got == sort_and_split_strata(list(reference_pool), 3)


def test_small_pool_returns_everything(caplog):
    pool = ElementPool([el("a", 5, 5), el("b", 6, 6), el("c", 7, 7)])
    cands = sample_candidate_set(pool, EngineConfig(candidate_set_size=30), 0)
    assert {c.id for c in cands} == {"a", "b", "c"}
    assert "fewer than candidate_set_size" in caplog.text


def test_sampling_is_deterministic(reference_pool):
    cfg = EngineConfig()
    assert [c.id for c in sample_candidate_set(reference_pool, cfg, 9)] == [c.id for c in sample_candidate_set(reference_pool, cfg, 9)]


def test_oversized_elements_never_sampled(caplog):
    page = PageSpec(200, 200, 10)
    pool = ElementPool([el("big", 190, 50), el("ok", 50, 50)])
    cands = sample_candidate_set(pool, EngineConfig(), 0, page)
    assert [c.id for c in cands] == ["ok"]
    assert "exceed the page interior" in caplog.text


# ---------------------------------------------------------------- seeding


def test_seed_full_interior_is_forced():
    page = PageSpec(300, 400, 24)
    lay = seed_layout(page, el("x", 252, 352), 5)
    assert boxes(lay) == [(24, 24, 252, 352)]


def test_seed_too_large():
    with pytest.raises(LayoutError):
        seed_layout(PageSpec(300, 400, 24), el("x", 253, 10), 0)


def test_seed_deterministic():
    page = PageSpec()
    assert boxes(seed_layout(page, el("x", 50, 30), 123)) == boxes(seed_layout(page, el("x", 50, 30), 123))


def test_seed_position_is_uniform():
    # 400 valid offsets per axis split evenly into 4 bins
    page = PageSpec(499 + 48, 499 + 48, 24)
    e = el("x", 100, 100)
    counts = np.zeros((4, 4))
    for s in range(10_000):
        p = seed_layout(page, e, s).placed[0]
        counts[(p.x - 24) // 100, (p.y - 24) // 100] += 1
    assert stats.chisquare(counts.ravel()).pvalue > 0.01


# ---------------------------------------------------------------- meshgrid


@pytest.mark.parametrize("gutter", [0, 6])
def test_centered_element_meshgrid(gutter):
    page = PageSpec(300, 300, 0)
    lay = Layout(page, (PlacedElement("e", "c", 100, 100, 100, 100),))
    cells = cell_tuples(build_meshgrid(lay, EngineConfig(gutter_px=gutter)))
    assert cells == brute_force_cells(lay, gutter)
    g = gutter
    elementary = [
        (a + g, b + g, 100 - 2 * g, 100 - 2 * g)
        for a in (0, 100, 200)
        for b in (0, 100, 200)
        if (a, b) != (100, 100)
    ]
    assert len(elementary) == 8
    assert set(elementary) <= set(cells)
    # merged strips, e.g. the whole top band
    assert (g, g, 300 - 2 * g, 100 - 2 * g) in cells


def test_full_interior_element_leaves_no_cells():
    page = PageSpec(300, 300, 10)
    lay = Layout(page, (PlacedElement("e", "c", 10, 10, 280, 280),))
    assert build_meshgrid(lay, EngineConfig(gutter_px=0)) == []


def test_meshgrid_needs_an_element():
    with pytest.raises(LayoutError):
        build_meshgrid(Layout(PageSpec()), EngineConfig())


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 6), gutter=st.sampled_from([0, 3, 6]))
def test_meshgrid_matches_brute_force(seed, n, gutter):
    pool = make_synthetic_pool(3, 5, seed=seed % 97)
    lay = generate_layout(pool, PageSpec(), EngineConfig(n_max=n, gutter_px=gutter, scale_range=(1.0, 1.0)), seed)
    cells = build_meshgrid(lay, EngineConfig(gutter_px=gutter))
    assert cell_tuples(cells) == brute_force_cells(lay, gutter)
    x0, y0, x1, y1 = lay.page.interior
    for c in cells:
        assert c.w > 0 and c.h > 0
        assert x0 <= c.x and c.x + c.w <= x1 and y0 <= c.y and c.y + c.h <= y1
        assert all(pairwise_overlap_area([(c.x, c.y, c.w, c.h), b]) == 0 for b in boxes(lay))


# ---------------------------------------------------------------- fill rate / search


@pytest.mark.parametrize(
    "cand,cell,expected",
    [((100, 50), (100, 50), 1.0), ((50, 50), (100, 100), 0.25), ((60, 40), (50, 100), None)],
)
def test_fill_rate(cand, cell, expected):
    assert fill_rate(el("a", *cand), GridCell(0, 0, *cell)) == expected


def test_best_fit_example():
    cands = [el("small", 20, 20), el("wide", 60, 40)]
    cells = [GridCell(0, 0, 100, 100), GridCell(200, 0, 60, 50)]
    got = best_fit_search(cands, cells)
    want = exhaustive_best_fit(cands, [(c.x, c.y, c.w, c.h) for c in cells])
    assert (got[0].id, got[1], got[2]) == ("wide", GridCell(200, 0, 60, 50), 0.8)
    assert want == ("wide", (200, 0, 60, 50), 0.8)


def test_best_fit_single_and_none():
    assert best_fit_search([el("a", 10, 10)], [GridCell(0, 0, 20, 20)])[2] == 0.25
    assert best_fit_search([el("a", 30, 30)], [GridCell(0, 0, 20, 20)]) is None
    assert best_fit_search([], [GridCell(0, 0, 20, 20)]) is None
    assert best_fit_search([el("a", 1, 1)], []) is None


def test_best_fit_tie_break():
    cells = [GridCell(50, 0, 10, 10), GridCell(0, 0, 10, 10), GridCell(0, 50, 9, 9)]
    cands = [el("b", 10, 10), el("a", 10, 10), el("c", 9, 9)]
    cand, cell, fr = best_fit_search(cands, cells)
    # fr 1.0 everywhere; the 9x9 cell is smaller and wins
    assert (cand.id, cell, fr) == ("c", GridCell(0, 50, 9, 9), 1.0)
    cand, cell, fr = best_fit_search(cands[:2], cells[:2])
    assert (cand.id, cell) == ("a", GridCell(0, 0, 10, 10))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), n_placed=st.integers(1, 6), n_cands=st.integers(1, 10), gutter=st.sampled_from([0, 6]))
def test_next_placement_matches_oracle(seed, n_placed, n_cands, gutter):
    rng = np.random.default_rng(seed)
    pool = make_synthetic_pool(6, 8, seed=seed % 50)
    cfg = EngineConfig(n_max=n_placed, gutter_px=gutter, scale_range=(1.0, 1.0))
    lay = generate_layout(pool, PageSpec(), cfg, seed)
    placed = {p.element_id for p in lay.placed}
    rest = [e for e in pool if e.id not in placed]
    cands = [rest[i] for i in rng.choice(len(rest), size=n_cands, replace=False)]
    want = exhaustive_best_fit(cands, brute_force_cells(lay, gutter))
    got = next_placement(lay, cands, cfg)
    via_public = best_fit_search(cands, build_meshgrid(lay, cfg))
    if want is None:
        assert got is None and via_public is None
    else:
        assert (got[0].id, (got[1].x, got[1].y, got[1].w, got[1].h), got[2]) == want
        assert (via_public[0].id, (via_public[1].x, via_public[1].y, via_public[1].w, via_public[1].h), via_public[2]) == want


# ---------------------------------------------------------------- place / scaling


def test_place_exact_fit():
    lay = Layout(PageSpec(300, 300, 0), (PlacedElement("e", "c", 0, 0, 100, 300),))
    out = place(lay, el("n", 200, 300), GridCell(100, 0, 200, 300))
    assert boxes(out)[-1] == (100, 0, 200, 300)
    assert build_meshgrid(out, EngineConfig(gutter_px=0)) == []


def test_place_rejects_misfit():
    lay = Layout(PageSpec(300, 300, 0), (PlacedElement("e", "c", 0, 0, 10, 10),))
    with pytest.raises(LayoutError):
        place(lay, el("n", 50, 50), GridCell(100, 100, 40, 40))


def test_place_rejects_overlap():
    lay = Layout(PageSpec(300, 300, 0), (PlacedElement("e", "c", 0, 0, 100, 100),))
    with pytest.raises(LayoutError, match="overlaps"):
        place(lay, el("n", 50, 50), GridCell(50, 50, 60, 60))


def test_five_placements_never_overlap(reference_pool):
    cfg = EngineConfig(gutter_px=0)
    lay = seed_layout(PageSpec(), el("s", 300, 200), 1)
    cands = list(reference_pool)[:40]
    for _ in range(5):
        cand, cell, _ = next_placement(lay, cands, cfg)
        lay = place(lay, cand, cell)
        cands.remove(cand)
        assert all(pairwise_overlap_area([(cell.x, cell.y, cell.w, cell.h), b]) == 0 for b in boxes(lay)[:-1] if b != boxes(lay)[-1])
    assert len(lay.placed) == 6
    assert pairwise_overlap_area(boxes(lay)) == 0


def test_scaling_identity_range(reference_pool):
    lay = generate_layout(reference_pool, cfg=EngineConfig(scale_range=(1.0, 1.0)), seed=3)
    assert apply_central_scaling(lay, EngineConfig(scale_range=(1.0, 1.0)), 0) == lay


def test_scaling_arithmetic():
    lay = Layout(PageSpec(), (PlacedElement("e", "c", 50, 50, 100, 100),))
    out = apply_central_scaling(lay, EngineConfig(scale_range=(0.9, 0.9)), 0)
    p = out.placed[0]
    assert (p.x, p.y, p.w, p.h, p.scale) == (55, 55, 90, 90, 0.9)


def test_scaling_keeps_layouts_disjoint(reference_pool):
    for s in range(100):
        lay = generate_layout(reference_pool, cfg=EngineConfig(scale_range=(1.0, 1.0), gutter_px=0), seed=s)
        scaled = apply_central_scaling(lay, EngineConfig(scale_range=(0.5, 1.0)), s)
        assert pairwise_overlap_area(boxes(scaled)) == 0
        for a, b in zip(lay.placed, scaled.placed):
            assert a.x <= b.x and b.x + b.w <= a.x + a.w and a.y <= b.y and b.y + b.h <= a.y + a.h


# ---------------------------------------------------------------- full generator


def test_budget_limits(reference_pool):
    cfg = EngineConfig()
    for s in range(40):
        lay = generate_layout(reference_pool, cfg=cfg, seed=s)
        assert len(lay.placed) <= 15
        n_small = sum(is_small(reference_pool[p.element_id].width_px, reference_pool[p.element_id].height_px, lay.page, cfg) for p in lay.placed)
        assert n_small <= 5
        assert check_layout(lay, cfg, pool=reference_pool) == []


def test_small_cap_binds():
    pool = make_synthetic_pool(2, 60, size_ranges=((30, 90), (20, 60)), seed=0)
    cfg = EngineConfig(n_max=15)
    counts = [len(generate_layout(pool, cfg=cfg, seed=s).placed) for s in range(10)]
    assert max(counts) == 5


def test_single_interior_sized_element():
    page = PageSpec(400, 500, 20)
    pool = ElementPool([el("only", 360, 460)])
    lay = generate_layout(pool, page, EngineConfig(), 0)
    assert len(lay.placed) == 1
    assert (lay.placed[0].element_id, lay.placed[0].x >= 20) == ("only", True)


def test_nothing_fits_page():
    with pytest.raises(LayoutError):
        generate_layout(ElementPool([el("huge", 5000, 10)]), PageSpec(), EngineConfig(), 0)


def test_candidates_bound_iterations(reference_pool):
    cfg = EngineConfig(n_max=100, candidate_set_size=8, mini_num=100)
    for s in range(10):
        assert len(generate_layout(reference_pool, cfg=cfg, seed=s).placed) <= 8


@pytest.mark.parametrize("fr_thr", [1e-4, 0.3, 0.6])
def test_stopping_rule_replays(reference_pool, fr_thr):
    page = PageSpec()
    cfg = EngineConfig(fr_thr=fr_thr, scale_range=(1.0, 1.0))
    for s in range(15):
        lay = generate_layout(reference_pool, page, cfg, s)
        cands = sample_candidate_set(reference_pool, cfg, np.random.default_rng(s), page)
        for k in range(1, len(lay.placed) + 1):
            on_page = {p.element_id for p in lay.placed[:k]}
            n_small = sum(is_small(p.w, p.h, page, cfg) for p in lay.placed[:k])
            rest = [c for c in cands if c.id not in on_page]
            eligible = [c for c in rest if n_small < cfg.mini_num or not is_small(c.width_px, c.height_px, page, cfg)]
            hit = next_placement(Layout(page, lay.placed[:k]), eligible, cfg)
            if k < len(lay.placed):
                nxt = lay.placed[k]
                assert hit[0].id == nxt.element_id and (hit[1].x, hit[1].y) == (nxt.x, nxt.y)
                assert hit[2] >= fr_thr
            elif k < cfg.n_max and rest:
                assert hit is None or hit[2] < fr_thr


def test_golden_layout(reference_pool, golden):
    lay = generate_layout(reference_pool, PageSpec(), EngineConfig(), 42)
    golden("layout_seed42.json", lay.to_json())
    assert Layout.from_json(lay.to_json()) == lay


def test_layout_json_key_order(reference_pool):
    text = generate_layout(reference_pool, seed=1).to_json()
    assert text.index('"page"') < text.index('"seed"') < text.index('"placed"')
    assert text.index('"element_id"') < text.index('"category"') < text.index('"scale"')


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), pool_seed=st.integers(0, 20), gutter=st.sampled_from([0, 6]),
       page=st.sampled_from([PageSpec(), PageSpec(800, 1000, 10), PageSpec(1240, 1754, 60)]))
def test_bestfit_invariants_property(seed, pool_seed, gutter, page):
    pool = make_synthetic_pool(12, 6, seed=pool_seed)
    cfg = EngineConfig(gutter_px=gutter)
    lay = generate_layout(pool, page, cfg, seed)
    assert check_layout(lay, cfg, pool=pool) == []
    assert pairwise_overlap_area(boxes(lay)) == 0


# ---------------------------------------------------------------- random baseline


def test_random_budget_and_determinism(reference_pool):
    cfg = EngineConfig()
    for s in range(30):
        lay = generate_random_layout(reference_pool, cfg=cfg, seed=s)
        assert 1 <= len(lay.placed) <= 15
        assert check_layout(lay, cfg, allow_overlap=True) == []
        assert lay == generate_random_layout(reference_pool, cfg=cfg, seed=s)
        assert all(p.scale == 1.0 for p in lay.placed)


def test_random_overlaps_are_common():
    pool = make_synthetic_pool(12, 25, seed=0, size_ranges=((40, 150), (30, 120)), page_size=(400, 500))
    page = PageSpec(400, 500, 24)
    hits = sum(pairwise_overlap_area(boxes(generate_random_layout(pool, page, EngineConfig(), s))) > 0 for s in range(100))
    assert hits > 50


# ---------------------------------------------------------------- datasets


def test_dataset_independent_of_threads(reference_pool):
    cfg = EngineConfig(seed=4)
    one = generate_dataset(reference_pool, PageSpec(), cfg, 100, "bestfit", threads=1)
    many = generate_dataset(reference_pool, PageSpec(), cfg, 100, "bestfit", threads=8)
    assert [l.to_json() for l in one] == [l.to_json() for l in many]


def test_dataset_of_one_matches_direct_call(reference_pool):
    cfg = EngineConfig(seed=77)
    (lay,) = generate_dataset(reference_pool, PageSpec(), cfg, 1)
    assert lay == generate_layout(reference_pool, PageSpec(), cfg, derive_seed(77, 0))
    assert lay.seed == derive_seed(77, 0)


def test_dataset_rejects_bad_arguments(reference_pool):
    with pytest.raises(ValueError):
        generate_dataset(reference_pool, count=0)
    with pytest.raises(ValueError):
        generate_dataset(reference_pool, count=1, method="diffusion")


def test_three_hundred_layouts_under_a_minute(reference_pool):
    t0 = time.perf_counter()
    generate_dataset(reference_pool, PageSpec(), EngineConfig(), 300)
    assert time.perf_counter() - t0 < 60


@pytest.mark.parametrize(
    "kwargs",
    [{"fr_thr": 0.0}, {"fr_thr": 1.5}, {"scale_range": (0.5, 1.2)}, {"scale_range": (0.9, 0.8)}, {"n_max": 0}],
)
def test_engine_config_validation(kwargs):
    with pytest.raises(ValueError):
        EngineConfig(**kwargs)


def test_page_validation():
    with pytest.raises(ValueError):
        PageSpec(40, 100, 20)
