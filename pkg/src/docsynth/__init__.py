"""Synthetic document layouts from a pool of cropped elements.

Mesh-candidate BestFit packing with a random-placement baseline, Align and
Density layout metrics, page rendering with COCO export, and a numerical
reference of the Controllable Receptive Module.
"""

from .augment import AugmentConfig, apply_augmentation, augment_rare_categories, sobel_edges
from .layout import (
    EngineConfig,
    GridCell,
    Layout,
    PageSpec,
    PlacedElement,
    best_fit_search,
    build_meshgrid,
    fill_rate,
    generate_dataset,
    generate_layout,
    generate_random_layout,
)
from .metrics import align_score, compare_methods, density_score
from .pool import ElementPool, ElementRecord, load_pool, make_synthetic_pool
from .render import compose_page, export_coco, export_svg_debug

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "ElementPool",
    "ElementRecord",
    "EngineConfig",
    "GridCell",
    "Layout",
    "PageSpec",
    "PlacedElement",
    "align_score",
    "apply_augmentation",
    "augment_rare_categories",
    "best_fit_search",
    "build_meshgrid",
    "compare_methods",
    "compose_page",
    "density_score",
    "export_coco",
    "export_svg_debug",
    "fill_rate",
    "generate_dataset",
    "generate_layout",
    "generate_random_layout",
    "load_pool",
    "make_synthetic_pool",
    "sobel_edges",
]
