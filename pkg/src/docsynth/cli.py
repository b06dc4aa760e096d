"""``docsynth`` command line: pool, synth, render, export-coco, metrics, crm-selfcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 invariant or
self-check failure. Settings resolve as flags > ``--config`` file > defaults.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import augment, crm, crm_oracle, layout, metrics, pool, render

log = logging.getLogger("docsynth")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3
OUT_ENV = "DOCSYNTH_OUT"


class UsageError(Exception):
    pass


class InvariantError(Exception):
    pass


# key: (type, default, help). Every key may appear in a --config file.
SETTINGS = {
    # page
    "page_width": (int, 1240, "page width in px"),
    "page_height": (int, 1754, "page height in px"),
    "margin": (int, 24, "empty border kept on every side, px"),
    # engine
    "n_max": (int, 15, "maximum elements per page (published value N=15)"),
    "fr_thr": (float, 1e-4, "stop when the best fill rate drops below this (published value 1e-4)"),
    "mini_num": (int, 5, "maximum small elements per page (published value Mini_num=5)"),
    "small_area_frac": (float, 0.02, "an element is small below this fraction of the page interior"),
    "candidate_set_size": (int, 30, "candidates drawn per page by area-stratified sampling"),
    "scale_min": (float, 0.85, "lower bound of the per-element central scaling factor"),
    "scale_max": (float, 1.0, "upper bound of the per-element central scaling factor"),
    "gutter": (int, 6, "spacing removed from each side of a free cell, px (0 = none)"),
    # augmentation
    "min_count": (int, 100, "categories below this many elements get augmented copies (published value 100)"),
    "p_flip": (float, 0.5, "probability of each of the horizontal and vertical flips"),
    "p_bc": (float, 0.5, "probability of random brightness/contrast"),
    "p_crop": (float, 0.7, "probability of random cropping"),
    "p_edge": (float, 0.2, "probability of Sobel edge extraction"),
    "p_elastic": (float, 1.0, "probability of elastic distortion plus Gaussian noise"),
    "crop_min": (float, 0.5, "smallest kept area fraction when cropping"),
    "crop_max": (float, 0.9, "largest kept area fraction when cropping"),
    "bc_delta": (float, 0.2, "relative brightness/contrast jitter"),
    "elastic_alpha": (float, 8.0, "elastic displacement magnitude, px"),
    "elastic_sigma": (float, 4.0, "elastic displacement smoothing, px"),
    "noise_std": (float, 0.02, "Gaussian noise std on [0, 1] intensities"),
    # run
    "seed": (int, 0, "master seed"),
    "count": (int, 100, "number of layouts"),
    "method": (str, "bestfit", "layout generator: bestfit or random"),
    "threads": (int, 1, "worker threads for dataset generation"),
}

GROUPS = {
    "page": ["page_width", "page_height", "margin"],
    "engine": ["n_max", "fr_thr", "mini_num", "small_area_frac", "candidate_set_size", "scale_min", "scale_max", "gutter"],
    "augment": [
        "min_count", "p_flip", "p_bc", "p_crop", "p_edge", "p_elastic",
        "crop_min", "crop_max", "bc_delta", "elastic_alpha", "elastic_sigma", "noise_std",
    ],
}


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are an error."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        try:
            out[key] = SETTINGS[key][0](value)
        except ValueError:
            raise UsageError(f"{path}:{n}: bad value {value!r} for {key}") from None
    return out


def resolve(args, keys) -> dict:
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    settings = {}
    for k in keys:
        flag = getattr(args, k, None)
        settings[k] = flag if flag is not None else file_values.get(k, SETTINGS[k][1])
    return settings


def _page_from(s) -> layout.PageSpec:
    return layout.PageSpec(s["page_width"], s["page_height"], s["margin"])


def _engine_from(s) -> layout.EngineConfig:
    return layout.EngineConfig(
        n_max=s["n_max"],
        fr_thr=s["fr_thr"],
        mini_num=s["mini_num"],
        small_area_frac=s["small_area_frac"],
        candidate_set_size=s["candidate_set_size"],
        scale_range=(s["scale_min"], s["scale_max"]),
        gutter_px=s["gutter"],
        seed=s["seed"],
    )


def _augment_from(s) -> augment.AugmentConfig:
    return augment.AugmentConfig(
        min_count=s["min_count"],
        p_flip=s["p_flip"],
        p_bc=s["p_bc"],
        p_crop=s["p_crop"],
        p_edge=s["p_edge"],
        p_elastic=s["p_elastic"],
        crop_area_range=(s["crop_min"], s["crop_max"]),
        bc_delta=s["bc_delta"],
        elastic_alpha=s["elastic_alpha"],
        elastic_sigma=s["elastic_sigma"],
        noise_std=s["noise_std"],
    )


def _validated(build):
    def wrapper(s):
        try:
            return build(s)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    return wrapper


page_from = _validated(_page_from)
engine_from = _validated(_engine_from)
augment_from = _validated(_augment_from)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_settings(p, keys, title):
    g = p.add_argument_group(title)
    for k in keys:
        typ, default, text = SETTINGS[k]
        kw = {"choices": sorted(layout.METHODS)} if k == "method" else {}
        g.add_argument("--" + k.replace("_", "-"), dest=k, type=typ, default=None, help=f"{text} (default: {default})", **kw)


def _default_out(sub: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "docsynth_out")) / sub


def _load_any_pool(args, seed_default=0) -> pool.ElementPool:
    if getattr(args, "pool", None):
        return pool.read_pool_dir(args.pool)
    if getattr(args, "synthetic", None):
        cats, per = pool.parse_synthetic_spec(args.synthetic)
        return pool.make_synthetic_pool(cats, per, seed=args.pool_seed if args.pool_seed is not None else seed_default)
    raise UsageError("give --pool DIR or --synthetic CATSxCOUNT")


def _read_layouts(directory) -> list[layout.Layout]:
    directory = Path(directory)
    files = sorted(directory.glob("*.json")) if directory.is_dir() else []
    if not files:
        raise pool.PoolError(f"no layout JSON files in {directory}")
    return [layout.Layout.from_json(f.read_text()) for f in files]


# --------------------------------------------------------------------------
# subcommands


def cmd_pool(args) -> int:
    s = resolve(args, ["seed"] + GROUPS["augment"])
    if bool(args.manifest) == bool(args.synthetic):
        raise UsageError("give exactly one of --manifest or --synthetic")
    if args.manifest:
        p = pool.load_pool(args.manifest, args.images)
    else:
        cats, per = pool.parse_synthetic_spec(args.synthetic)
        p = pool.make_synthetic_pool(cats, per, seed=s["seed"])
    if args.augment:
        p = augment.augment_rare_categories(p, augment_from(s), seed=s["seed"])
    out = Path(args.out) if args.out else _default_out("pool")
    pool.save_pool(p, out)
    counts = p.counts()
    print(f"wrote {len(p)} elements in {len(counts)} categories to {out}")
    for name, n in counts.items():
        print(f"  {name:<24} {n}")
    return EXIT_OK


def cmd_synth(args) -> int:
    s = resolve(args, ["seed", "count", "method", "threads"] + GROUPS["page"] + GROUPS["engine"])
    if s["count"] < 1:
        raise UsageError("--count must be >= 1")
    if s["method"] not in layout.METHODS:
        raise UsageError(f"unknown method {s['method']!r}")
    p = _load_any_pool(args)
    page, cfg = page_from(s), engine_from(s)
    layouts = layout.generate_dataset(p, page, cfg, s["count"], s["method"], s["threads"])
    bad = []
    for i, l in enumerate(layouts):
        problems = layout.check_layout(l, cfg, allow_overlap=s["method"] == "random", pool=p)
        bad.extend(f"layout {i}: {msg}" for msg in problems)
    out = Path(args.out) if args.out else _default_out("synth")
    (out / "layouts").mkdir(parents=True, exist_ok=True)
    for i, l in enumerate(layouts):
        (out / "layouts" / f"{i:06d}.json").write_text(l.to_json())
    if args.coco:
        render.export_coco(layouts, out / "annotations.json", render.category_vocabulary(layouts, p))
    if args.render:
        _render_all(layouts, p, out, args.svg)
    print(f"wrote {len(layouts)} {s['method']} layouts to {out}")
    if bad:
        for msg in bad[:20]:
            print("invariant violated:", msg, file=sys.stderr)
        raise InvariantError(f"{len(bad)} invariant violation(s)")
    return EXIT_OK


def _render_all(layouts, p, out, svg=False, cells=False):
    (out / "pages").mkdir(parents=True, exist_ok=True)
    for i, l in enumerate(layouts):
        render.compose_page(l, p).save(out / "pages" / f"{i:06d}.png")
        if svg:
            grid = layout.build_meshgrid(l, layout.EngineConfig(gutter_px=0)) if cells and l.placed else None
            render.export_svg_debug(l, out / "pages" / f"{i:06d}.svg", grid)


def cmd_render(args) -> int:
    layouts = _read_layouts(args.layouts)
    p = pool.read_pool_dir(args.pool)
    out = Path(args.out) if args.out else _default_out("render")
    _render_all(layouts, p, out, args.svg or args.cells, args.cells)
    print(f"rendered {len(layouts)} pages to {out / 'pages'}")
    return EXIT_OK


def cmd_export_coco(args) -> int:
    layouts = _read_layouts(args.layouts)
    vocab = render.category_vocabulary(layouts, pool.read_pool_dir(args.pool) if args.pool else None)
    out = Path(args.out) if args.out else _default_out("export") / "annotations.json"
    render.export_coco(layouts, out, vocab)
    print(f"wrote {len(layouts)} images to {out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    datasets = {}
    for spec in args.datasets:
        name, _, path = spec.rpartition("=")
        path = Path(path)
        datasets[name or path.name] = _read_layouts(path / "layouts" if (path / "layouts").is_dir() else path)
    rows = metrics.compare_methods(datasets, args.baseline)
    out = Path(args.out) if args.out else _default_out("metrics")
    out.mkdir(parents=True, exist_ok=True)
    text = metrics.report_text(rows)
    (out / "report.json").write_text(metrics.report_json(rows))
    (out / "report.txt").write_text(text)
    if not args.no_figure:
        metrics.plot_report(rows, out / "report.png")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_crm_selfcheck(args) -> int:
    presets = ("global", "block") if args.preset == "all" else (args.preset,)
    checks = crm_oracle.run_selfcheck(presets, cases=args.cases, seed=args.seed, fault=args.inject_fault)
    if args.params:
        params, cfg = crm.load_params(args.params)
        rng = np.random.default_rng(args.seed)
        x = rng.normal(0, 1, (params.c_in, 8, 8))
        dev = crm_oracle.rel_error(crm.crm_forward(x, params, cfg), crm_oracle.naive_crm(x, params, cfg))
        checks.append(crm_oracle.Check(f"{args.params}: oracle relative error", dev, 1e-10))
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  max deviation {c.deviation:.3e} (tol {c.tolerance:g})")
    if not all(c.passed for c in checks):
        raise InvariantError("CRM self-check failed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="docsynth", description="Synthetic document layouts via Mesh-candidate BestFit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value settings file (flags take precedence)")
        sp.add_argument("-o", "--out", help=f"output location (default: ${OUT_ENV} or ./docsynth_out, plus the subcommand name)")

    sp = sub.add_parser("pool", help="build an element pool directory", description="Build an element pool from a COCO manifest or a synthetic spec.")
    sp.add_argument("--manifest", help="COCO JSON manifest")
    sp.add_argument("--images", help="image directory (default: the manifest's directory)")
    sp.add_argument("--synthetic", metavar="CATSxCOUNT", help="procedural pool, e.g. 12x25")
    sp.add_argument("--augment", action="store_true", help="pad rare categories with augmented copies")
    _add_settings(sp, ["seed"], "run")
    _add_settings(sp, GROUPS["augment"], "augmentation")
    common(sp)
    sp.set_defaults(func=cmd_pool)

    sp = sub.add_parser("synth", help="generate layouts", description="Generate layouts with BestFit or the random baseline.")
    sp.add_argument("--pool", help="pool directory written by `docsynth pool`")
    sp.add_argument("--synthetic", metavar="CATSxCOUNT", help="use a procedural pool instead of --pool")
    sp.add_argument("--pool-seed", type=int, default=None, help="seed of the procedural pool (default: 0)")
    sp.add_argument("--render", action="store_true", help="also write page PNGs")
    sp.add_argument("--svg", action="store_true", help="with --render, also write SVG debug views")
    sp.add_argument("--coco", action="store_true", help="also write annotations.json (COCO)")
    _add_settings(sp, ["seed", "count", "method", "threads"], "run")
    _add_settings(sp, GROUPS["engine"], "engine")
    _add_settings(sp, GROUPS["page"], "page")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("render", help="render layout JSONs to page images")
    sp.add_argument("--pool", required=True)
    sp.add_argument("--layouts", required=True, help="directory of layout JSON files")
    sp.add_argument("--svg", action="store_true", help="also write SVG debug views")
    sp.add_argument("--cells", action="store_true", help="draw the free meshgrid cells in the SVG")
    common(sp)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("export-coco", help="export layout JSONs as one COCO file")
    sp.add_argument("--layouts", required=True)
    sp.add_argument("--pool", help="pool directory supplying the full category vocabulary")
    common(sp)
    sp.set_defaults(func=cmd_export_coco)

    sp = sub.add_parser("metrics", help="Align/Density report", description="Compare datasets of layouts on Align and Density.")
    sp.add_argument("datasets", nargs="+", metavar="[NAME=]DIR", help="layout directories (synth output or its layouts/)")
    sp.add_argument("--baseline", help="method the ratios are taken against (default: random if present)")
    sp.add_argument("--no-figure", action="store_true", help="skip report.png")
    common(sp)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("crm-selfcheck", help="verify the CRM forward pass against its loop oracle")
    sp.add_argument("--preset", choices=["global", "block", "all"], default="all", help="global: k=5, d=1,2,3; block: k=3, d=1,2,3 (default: all)")
    sp.add_argument("--cases", type=int, default=20, help="random oracle cases (default: 20)")
    sp.add_argument("--seed", type=int, default=0, help="(default: 0)")
    sp.add_argument("--params", help="JSON parameter file to check in addition")
    sp.add_argument("--inject-fault", choices=["padding"], default=None, help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_crm_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"docsynth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantError as exc:
        print(f"docsynth: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (pool.PoolError, layout.LayoutError, KeyError, ValueError, OSError) as exc:
        print(f"docsynth: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
