"""Turn correspondence fields into images.

Reconstruction copies, for every field cell, the matched training pair's
pixel patch (input or output side) into the query's patch rectangle and
averages overlapping contributions with uniform weights — deliberately plain
copy-paste, no seam or gradient blending. Accumulation runs in fixed
row-major cell order so results are bit-reproducible; pixels no patch
reaches are filled black and reported, never silently invented.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .database import TrainingDatabase, TrainingPair
from .errors import ConfigError, ShapeError
from .metrics import ClassPalette, quantize
from .search import NNField, SearchConfig, hpm_run
from .tensors import ActivationTensor, LayerSpec, layer_geometry

#: Fixed correspondence-map palette: 16 visually distinct RGB colors.
#: Sources are colored in ascending image-id order; beyond 16 the cycle
#: repeats and the emitted legend disambiguates.
DISTINCT_COLORS = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
)


def color_hex(rgb: tuple[int, int, int]) -> str:
    return "#%02X%02X%02X" % tuple(rgb)


def round_half_up(values: np.ndarray) -> np.ndarray:
    """Float → uint8 with exact .5 rounding away from zero toward 255."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


@dataclass
class CoverageReport:
    uncovered_pixels: int
    uncovered_mask: np.ndarray


@dataclass
class CorrespondenceMap:
    query_overlay: np.ndarray
    sources: dict[int, np.ndarray]
    legend: dict[str, int | list[int]]
    colors: dict[int, tuple[int, int, int]] = dc_field(default_factory=dict)


def _check_field(field: NNField, db: TrainingDatabase, layer: LayerSpec) -> None:
    if layer.layer_name not in db.layer_specs or db.layer_specs[layer.layer_name] != layer:
        raise ConfigError(f"database does not declare layer {layer.layer_name!r}")
    if field.layer_name and field.layer_name != layer.layer_name:
        raise ConfigError(
            f"field was built at layer {field.layer_name!r}, "
            f"composition requested {layer.layer_name!r}"
        )
    gh, gw = field.grid_shape
    if gh < 1 or gw < 1:
        raise ConfigError("field grid is empty")
    if field.ids.min() < 0 or field.ids.max() >= len(db):
        raise ConfigError("field references image ids outside the database")
    pos_h, pos_w = db.positions_shape(layer.layer_name)
    if (
        field.ys.min() < 0
        or field.xs.min() < 0
        or field.ys.max() >= pos_h
        or field.xs.max() >= pos_w
    ):
        raise ConfigError("field holds out-of-bounds training positions")


def _blend(base: np.ndarray, color: np.ndarray | tuple, mask: np.ndarray) -> np.ndarray:
    out = base.astype(np.float64)
    tint = np.asarray(color, dtype=np.float64)
    out[mask] = 0.5 * out[mask] + 0.5 * tint
    return round_half_up(out)


def reconstruct(
    field: NNField,
    db: TrainingDatabase,
    layer: LayerSpec,
    source: str = "input",
) -> tuple[np.ndarray, CoverageReport]:
    """Compose an image by copy-pasting matched patches, averaging overlaps.

    ``source`` selects which side of each matched pair supplies pixels:
    "input" reconstructs what the layer's embedding preserves about the
    network input, "output" what it contributes to the synthesized output.
    """
    if source not in ("input", "output"):
        raise ConfigError(f"source must be 'input' or 'output', got {source!r}")
    _check_field(field, db, layer)

    img_h, img_w = db.image_height, db.image_width
    acc = np.zeros((img_h, img_w, 3), dtype=np.float64)
    weight = np.zeros((img_h, img_w), dtype=np.float64)
    side = "input_image" if source == "input" else "output_image"
    images = [getattr(pair, side).astype(np.float64) for pair in db.pairs]

    gh, gw = field.grid_shape
    for gy in range(gh):
        for gx in range(gw):
            q = layer_geometry(layer, (gy, gx))
            ty = int(field.ys[gy, gx]) * layer.scale
            tx = int(field.xs[gy, gx]) * layer.scale
            h = min(q.size, img_h - q.top, img_h - ty)
            w = min(q.size, img_w - q.left, img_w - tx)
            if h <= 0 or w <= 0:
                continue
            src = images[int(field.ids[gy, gx])]
            acc[q.top : q.top + h, q.left : q.left + w] += src[ty : ty + h, tx : tx + w]
            weight[q.top : q.top + h, q.left : q.left + w] += 1.0

    covered = weight > 0
    out = np.zeros((img_h, img_w, 3), dtype=np.uint8)
    out[covered] = round_half_up(acc[covered] / weight[covered, None])
    return out, CoverageReport(
        uncovered_pixels=int((~covered).sum()), uncovered_mask=~covered
    )


def correspondence_map(
    field: NNField,
    db: TrainingDatabase,
    layer: LayerSpec,
    query_image: np.ndarray,
    source: str = "input",
) -> CorrespondenceMap:
    """Color-code which training image each query pixel was matched to.

    Each contributing pair gets a distinct palette color (ascending id). The
    query overlay tints every pixel with its owner cell's color at 50% alpha;
    the owner of pixel (py, px) is the cell whose rectangle anchors nearest
    at or before it, i.e. (py // scale, px // scale) clamped to the grid. One
    raster per contributing pair shows its matched source regions tinted in
    the same color, and the legend maps color_hex → image_id.
    """
    _check_field(field, db, layer)
    if source not in ("input", "output"):
        raise ConfigError(f"source must be 'input' or 'output', got {source!r}")
    query = np.asarray(query_image, dtype=np.uint8)
    if query.ndim != 3 or query.shape[2] != 3:
        raise ShapeError(f"query image must be (H, W, 3), got {query.shape}")

    gh, gw = field.grid_shape
    contributors = sorted(int(i) for i in np.unique(field.ids))
    colors = {
        image_id: DISTINCT_COLORS[rank % len(DISTINCT_COLORS)]
        for rank, image_id in enumerate(contributors)
    }

    qh, qw = query.shape[:2]
    owner_y = np.clip(np.arange(qh) // layer.scale, 0, gh - 1)
    owner_x = np.clip(np.arange(qw) // layer.scale, 0, gw - 1)
    owner_ids = field.ids[np.ix_(owner_y, owner_x)]
    color_table = np.zeros((len(db), 3), dtype=np.float64)
    for image_id, rgb in colors.items():
        color_table[image_id] = rgb
    overlay = round_half_up(0.5 * query.astype(np.float64) + 0.5 * color_table[owner_ids])

    side = "input_image" if source == "input" else "output_image"
    sources: dict[int, np.ndarray] = {}
    img_h, img_w = db.image_height, db.image_width
    for image_id in contributors:
        mask = np.zeros((img_h, img_w), dtype=bool)
        cells = np.argwhere(field.ids == image_id)
        for gy, gx in cells:
            top = int(field.ys[gy, gx]) * layer.scale
            left = int(field.xs[gy, gx]) * layer.scale
            size = layer.patch_size
            mask[top : min(top + size, img_h), left : min(left + size, img_w)] = True
        base = getattr(db.pairs[image_id], side)
        sources[image_id] = _blend(base, colors[image_id], mask)

    legend: dict[str, int | list[int]] = {}
    for image_id in contributors:
        key = color_hex(colors[image_id])
        if key in legend:
            prev = legend[key]
            legend[key] = prev + [image_id] if isinstance(prev, list) else [prev, image_id]
        else:
            legend[key] = image_id
    return CorrespondenceMap(
        query_overlay=overlay, sources=sources, legend=legend, colors=colors
    )


@dataclass
class SemanticPair:
    class_name: str
    query_raster: np.ndarray
    train_raster: np.ndarray
    query_cells: int


def semantic_correspondence(
    query_tensors: dict[str, ActivationTensor],
    query_image: np.ndarray,
    train_tensors: dict[str, ActivationTensor],
    train_image: np.ndarray,
    layer: LayerSpec,
    query_labels: np.ndarray,
    palette: ClassPalette,
    class_names: list[str],
    config: SearchConfig | None = None,
    threads: int = 1,
) -> list[SemanticPair]:
    """Link same-class patches across an image pair through feature matching.

    Runs the approximate search against a single-pair database holding only
    the training image. A query cell belongs to a class when the quantized
    label under its patch rectangle's center does; for every requested class,
    the class color tints those query patches and their matched patches in
    the training image. Returns one (query, train) raster pair per class.
    """
    name = layer.layer_name
    if name not in query_tensors:
        raise ConfigError(f"query provides no tensor for layer {name!r}")
    if name not in train_tensors:
        raise ConfigError(f"training pair provides no tensor for layer {name!r}")
    query_labels = np.asarray(query_labels, dtype=np.uint8)
    if query_labels.shape[:2] != query_image.shape[:2]:
        raise ShapeError("label raster does not align with the query image")
    unknown = [c for c in class_names if c not in palette.names]
    if unknown:
        raise ConfigError(f"classes not in palette: {unknown}")

    mini_db = TrainingDatabase(
        pairs=[
            TrainingPair(
                image_id=0,
                input_image=np.asarray(train_image, dtype=np.uint8),
                output_image=np.asarray(train_image, dtype=np.uint8),
                tensors={name: train_tensors[name]},
            )
        ],
        layer_specs={name: layer},
        descriptor_layer=name,
    )
    if config is None:
        config = SearchConfig(candidate_image_ids=(0,))
    elif config.candidate_image_ids != (0,):
        config = SearchConfig(
            candidate_image_ids=(0,),
            iterations=config.iterations,
            rng_seed=config.rng_seed,
            random_samples_per_cell_per_iter=config.random_samples_per_cell_per_iter,
        )
    field = hpm_run(query_tensors[name], mini_db, layer, config, threads=threads)

    label_classes = quantize(query_labels, palette)
    lbl_h, lbl_w = label_classes.shape
    gh, gw = field.grid_shape
    img_h, img_w = train_image.shape[:2]

    results = []
    for cname in class_names:
        cls = palette.names.index(cname)
        q_mask = np.zeros(query_image.shape[:2], dtype=bool)
        t_mask = np.zeros((img_h, img_w), dtype=bool)
        cells = 0
        for gy in range(gh):
            for gx in range(gw):
                rect = layer_geometry(layer, (gy, gx))
                cy = min(rect.top + rect.size // 2, lbl_h - 1)
                cx = min(rect.left + rect.size // 2, lbl_w - 1)
                if label_classes[cy, cx] != cls:
                    continue
                cells += 1
                q_mask[
                    rect.top : min(rect.top + rect.size, q_mask.shape[0]),
                    rect.left : min(rect.left + rect.size, q_mask.shape[1]),
                ] = True
                ty = int(field.ys[gy, gx]) * layer.scale
                tx = int(field.xs[gy, gx]) * layer.scale
                t_mask[
                    ty : min(ty + rect.size, img_h), tx : min(tx + rect.size, img_w)
                ] = True
        color = palette.colors[cls]
        results.append(
            SemanticPair(
                class_name=cname,
                query_raster=_blend(np.asarray(query_image, dtype=np.uint8), color, q_mask),
                train_raster=_blend(np.asarray(train_image, dtype=np.uint8), color, t_mask),
                query_cells=cells,
            )
        )
    return results
