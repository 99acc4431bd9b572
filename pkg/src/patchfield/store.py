"""Bit-exact persistence: tensor files, field dumps, manifests, ingest.

Tensor file (``.chpt``), 20-byte header then payload, all little-endian::

    magic   4 bytes  "CHPT"
    version u32      1
    H, W, D u32 each
    payload H·W·D IEEE-754 binary32, row-major (H, then W, then D)

Field dump (``.chpf``), 16-byte header then one record per grid cell in
row-major order::

    magic   4 bytes  "CHPF"
    version u32      1
    grid_h, grid_w u32
    cells   grid_h·grid_w × (image_id u32, y u32, x u32, distance f32)

The dataset manifest is JSON (schema shipped in ``schemas/``): image size,
layer table (name, hyperpatch [h, w, d], patch_size, scale, role), and the
pair list (id, input/output PNG, tensor file per layer, optional tags).
Paths are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .database import TrainingDatabase, TrainingPair
from .errors import (
    BadMagicError,
    BadVersionError,
    ConfigError,
    DuplicateIdError,
    EmptySetError,
    ManifestError,
    MissingFileError,
    NonFiniteValueError,
    ShapeError,
    ShapeMismatchError,
    TruncatedFileError,
)
from .search import NNField
from .tensors import ActivationTensor, LayerSpec

TENSOR_MAGIC = b"CHPT"
FIELD_MAGIC = b"CHPF"
TENSOR_VERSION = 1
FIELD_VERSION = 1

_TENSOR_HEADER = struct.Struct("<4s4I")
_FIELD_HEADER = struct.Struct("<4s3I")
_CELL_DTYPE = np.dtype([("id", "<u4"), ("y", "<u4"), ("x", "<u4"), ("d", "<f4")])

LAYER_ROLES = ("encoder", "decoder", "descriptor")


def write_tensor(tensor: ActivationTensor, path: str | os.PathLike) -> None:
    header = _TENSOR_HEADER.pack(
        TENSOR_MAGIC, TENSOR_VERSION, tensor.height, tensor.width, tensor.depth
    )
    payload = np.ascontiguousarray(tensor.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_tensor(path: str | os.PathLike, layer_name: str = "") -> ActivationTensor:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _TENSOR_HEADER.size:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes is shorter than the header")
    magic, version, h, w, d = _TENSOR_HEADER.unpack_from(raw)
    if magic != TENSOR_MAGIC:
        raise BadMagicError(f"{path}: magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != TENSOR_VERSION:
        raise BadVersionError(f"{path}: version {version}, expected {TENSOR_VERSION}")
    if min(h, w, d) < 1:
        raise ShapeError(f"{path}: header declares empty dims {h}×{w}×{d}")
    expected = _TENSOR_HEADER.size + 4 * h * w * d
    if len(raw) != expected:
        raise TruncatedFileError(
            f"{path}: size {len(raw)} bytes, header promises {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=_TENSOR_HEADER.size)
    if not np.isfinite(values).all():
        raise NonFiniteValueError(f"{path}: payload contains non-finite values")
    return ActivationTensor(layer_name, values.reshape(h, w, d))


def write_field(field: NNField, path: str | os.PathLike) -> None:
    gh, gw = field.grid_shape
    if min(field.ids.min(), field.ys.min(), field.xs.min()) < 0:
        raise ShapeError("field holds negative ids or positions; cannot encode as u32")
    cells = np.empty(gh * gw, dtype=_CELL_DTYPE)
    cells["id"] = field.ids.reshape(-1)
    cells["y"] = field.ys.reshape(-1)
    cells["x"] = field.xs.reshape(-1)
    cells["d"] = field.dist.reshape(-1).astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(_FIELD_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, gh, gw))
        fh.write(cells.tobytes())


def read_field(path: str | os.PathLike, layer_name: str = "") -> NNField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _FIELD_HEADER.size:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes is shorter than the header")
    magic, version, gh, gw = _FIELD_HEADER.unpack_from(raw)
    if magic != FIELD_MAGIC:
        raise BadMagicError(f"{path}: magic {magic!r}, expected {FIELD_MAGIC!r}")
    if version != FIELD_VERSION:
        raise BadVersionError(f"{path}: version {version}, expected {FIELD_VERSION}")
    if min(gh, gw) < 1:
        raise ShapeError(f"{path}: header declares empty grid {gh}×{gw}")
    expected = _FIELD_HEADER.size + gh * gw * _CELL_DTYPE.itemsize
    if len(raw) != expected:
        raise TruncatedFileError(
            f"{path}: size {len(raw)} bytes, header promises {expected}"
        )
    cells = np.frombuffer(raw, dtype=_CELL_DTYPE, offset=_FIELD_HEADER.size)
    dist = cells["d"].astype(np.float64)
    if not np.isfinite(dist).all():
        raise NonFiniteValueError(f"{path}: non-finite distances")
    return NNField(
        layer_name=layer_name,
        ids=cells["id"].astype(np.int64).reshape(gh, gw),
        ys=cells["y"].astype(np.int64).reshape(gh, gw),
        xs=cells["x"].astype(np.int64).reshape(gh, gw),
        dist=dist.reshape(gh, gw),
        eval_count=0,
    )


def load_image(path: str | os.PathLike) -> np.ndarray:
    """PNG → (H, W, 3) uint8. Palette and grayscale images are expanded."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise MissingFileError(f"image file not found: {path}") from None
    except UnidentifiedImageError as exc:
        raise ManifestError(f"{path}: not a readable image: {exc}") from None


def save_image(raster: np.ndarray, path: str | os.PathLike) -> None:
    Image.fromarray(np.asarray(raster, dtype=np.uint8), mode="RGB").save(path, "PNG")


def pix2pix_layer_table() -> list[dict]:
    """Manifest layer entries mirroring the published Pix2Pix layer table.

    The table pins hyperpatch extents (2×2×depth) and patch sizes; it carries
    no pixels-per-cell column, and its patch sizes cannot be reconciled with
    real checkpoint tensor dims in every row (encoder_1 especially). We default
    scale = patch_size/2 so a stride-1 field covers a 256×256 image exactly
    when tensors are 512/patch_size cells square; override per manifest when
    exporting from an actual checkpoint.
    """
    encoders = [(1, 64, 2), (2, 128, 4), (3, 256, 8), (4, 512, 16),
                (5, 512, 32), (6, 512, 64), (7, 512, 128)]
    decoders = [(8, 1024, 128), (7, 1024, 64), (6, 1024, 32), (5, 1024, 16),
                (4, 512, 8), (3, 256, 4), (2, 128, 2)]
    layers = []
    for idx, depth, patch in encoders:
        layers.append({
            "name": f"encoder_{idx}",
            "hyperpatch": [2, 2, depth],
            "patch_size": patch,
            "scale": max(1, patch // 2),
            "role": "encoder",
        })
    for idx, depth, patch in decoders:
        layers.append({
            "name": f"decoder_{idx}",
            "hyperpatch": [2, 2, depth],
            "patch_size": patch,
            "scale": max(1, patch // 2),
            "role": "descriptor" if idx == 7 else "decoder",
        })
    return layers


def _require(doc: dict, key: str, kind: type, where: str):
    if key not in doc:
        raise ManifestError(f"{where}: missing required key {key!r}")
    value = doc[key]
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise ManifestError(
            f"{where}: {key!r} must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


def parse_layer_entry(entry: dict, where: str) -> LayerSpec:
    name = _require(entry, "name", str, where)
    hp = _require(entry, "hyperpatch", list, where)
    if len(hp) != 3 or not all(isinstance(v, int) and not isinstance(v, bool) for v in hp):
        raise ManifestError(f"{where}: hyperpatch must be [h, w, d] integers")
    patch_size = _require(entry, "patch_size", int, where)
    scale = _require(entry, "scale", int, where)
    role = _require(entry, "role", str, where)
    if role not in LAYER_ROLES:
        raise ManifestError(f"{where}: role {role!r} not one of {LAYER_ROLES}")
    try:
        return LayerSpec(
            layer_name=name,
            hyperpatch_h=hp[0],
            hyperpatch_w=hp[1],
            depth=hp[2],
            patch_size=patch_size,
            scale=scale,
        )
    except ShapeError as exc:
        raise ManifestError(f"{where}: {exc}") from None


def load_manifest(path: str | os.PathLike) -> dict:
    """Parse and structurally validate a manifest document (no file loading)."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise MissingFileError(f"manifest not found: {path}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")

    size = _require(doc, "image_size", dict, str(path))
    _require(size, "w", int, f"{path} image_size")
    _require(size, "h", int, f"{path} image_size")

    layers = _require(doc, "layers", list, str(path))
    if not layers:
        raise ManifestError(f"{path}: at least one layer is required")
    names = []
    descriptor_layers = []
    for i, entry in enumerate(layers):
        if not isinstance(entry, dict):
            raise ManifestError(f"{path} layers[{i}]: must be an object")
        spec = parse_layer_entry(entry, f"{path} layers[{i}]")
        if spec.layer_name in names:
            raise ManifestError(f"{path}: duplicate layer name {spec.layer_name!r}")
        names.append(spec.layer_name)
        if entry["role"] == "descriptor":
            descriptor_layers.append(spec.layer_name)
    if len(descriptor_layers) != 1:
        raise ManifestError(
            f"{path}: exactly one layer must have role 'descriptor', "
            f"found {len(descriptor_layers)}"
        )

    pairs = _require(doc, "pairs", list, str(path))
    if not pairs:
        raise ManifestError(f"{path}: at least one pair is required")
    seen_ids: set[int] = set()
    for i, entry in enumerate(pairs):
        if not isinstance(entry, dict):
            raise ManifestError(f"{path} pairs[{i}]: must be an object")
        where = f"{path} pairs[{i}]"
        pid = _require(entry, "id", int, where)
        if pid in seen_ids:
            raise DuplicateIdError(f"{where}: pair id {pid} appears more than once")
        seen_ids.add(pid)
        _require(entry, "input_png", str, where)
        _require(entry, "output_png", str, where)
        tensors = _require(entry, "tensors", dict, where)
        for name in names:
            if name not in tensors:
                raise ManifestError(f"{where}: no tensor for declared layer {name!r}")
        tags = entry.get("tags", [])
        if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
            raise ManifestError(f"{where}: tags must be a list of strings")
    if seen_ids != set(range(len(pairs))):
        raise ManifestError(
            f"{path}: pair ids must be dense 0..{len(pairs) - 1}, got {sorted(seen_ids)}"
        )
    if "palette" in doc and not isinstance(doc["palette"], str):
        raise ManifestError(f"{path}: palette must be a path string")
    return doc


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def ingest(manifest_path: str | os.PathLike) -> tuple[TrainingDatabase, dict]:
    """Load, validate, and descriptor-precompute a dataset.

    Returns the database plus an ingest report (pairs, layers, bytes read,
    descriptor layer). Ingesting the same manifest twice yields equal
    databases.
    """
    manifest_path = Path(manifest_path)
    doc = load_manifest(manifest_path)
    base = manifest_path.parent

    layer_specs: dict[str, LayerSpec] = {}
    descriptor_layer = ""
    for entry in doc["layers"]:
        spec = parse_layer_entry(entry, str(manifest_path))
        layer_specs[spec.layer_name] = spec
        if entry["role"] == "descriptor":
            descriptor_layer = spec.layer_name

    img_w = doc["image_size"]["w"]
    img_h = doc["image_size"]["h"]
    total_bytes = 0
    pairs: list[TrainingPair] = []
    for entry in doc["pairs"]:
        pid = entry["id"]
        images = {}
        for key in ("input_png", "output_png"):
            path = _resolve(base, entry[key])
            if not path.is_file():
                raise MissingFileError(f"pair {pid}: {key} not found: {path}")
            images[key] = load_image(path)
            total_bytes += path.stat().st_size
            if images[key].shape[:2] != (img_h, img_w):
                raise ShapeMismatchError(
                    f"pair {pid}: {key} is {images[key].shape[1]}×{images[key].shape[0]}, "
                    f"manifest declares {img_w}×{img_h}"
                )
        tensors: dict[str, ActivationTensor] = {}
        for name, spec in layer_specs.items():
            tpath = _resolve(base, entry["tensors"][name])
            if not tpath.is_file():
                raise MissingFileError(f"pair {pid}: tensor for layer {name!r} not found: {tpath}")
            tensor = read_tensor(tpath, layer_name=name)
            total_bytes += tpath.stat().st_size
            if tensor.depth != spec.depth:
                raise ShapeMismatchError(
                    f"pair {pid} layer {name!r}: tensor depth {tensor.depth}, "
                    f"layer declares {spec.depth}"
                )
            if tensor.height < spec.hyperpatch_h or tensor.width < spec.hyperpatch_w:
                raise ShapeMismatchError(
                    f"pair {pid} layer {name!r}: tensor {tensor.height}×{tensor.width} "
                    f"cannot host a {spec.hyperpatch_h}×{spec.hyperpatch_w} hyperpatch"
                )
            tensors[name] = tensor
        pairs.append(
            TrainingPair(
                image_id=pid,
                input_image=images["input_png"],
                output_image=images["output_png"],
                tensors=tensors,
                tags=tuple(entry.get("tags", [])),
            )
        )

    try:
        db = TrainingDatabase(pairs, layer_specs, descriptor_layer)
    except (ShapeError, ConfigError) as exc:
        raise ShapeMismatchError(str(exc)) from None

    report = {
        "manifest": str(manifest_path),
        "pairs": len(pairs),
        "layers": sorted(layer_specs),
        "descriptor_layer": descriptor_layer,
        "image_size": {"w": img_w, "h": img_h},
        "bytes": total_bytes,
    }
    return db, report


class QuerySpec:
    """A query for reconstruction: image, per-layer tensors, optional labels.

    Loaded from a small JSON file::

        {"input_png": "...", "tensors": {"layer": "file.chpt"},
         "labels_png": "...(optional)", "output_png": "...(optional)"}

    Paths resolve relative to the spec file's directory.
    """

    def __init__(
        self,
        image: np.ndarray,
        tensors: dict[str, ActivationTensor],
        labels: np.ndarray | None = None,
        output_image: np.ndarray | None = None,
    ):
        self.image = image
        self.tensors = tensors
        self.labels = labels
        self.output_image = output_image


def load_query_spec(path: str | os.PathLike) -> QuerySpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise MissingFileError(f"query spec not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")
    _require(doc, "input_png", str, str(path))
    tensors_doc = _require(doc, "tensors", dict, str(path))
    if not tensors_doc:
        raise ManifestError(f"{path}: tensors map must not be empty")
    base = path.parent
    image = load_image(_resolve(base, doc["input_png"]))
    tensors = {}
    for name, rel in tensors_doc.items():
        tpath = _resolve(base, rel)
        if not tpath.is_file():
            raise MissingFileError(f"{path}: tensor for layer {name!r} not found: {tpath}")
        tensors[name] = read_tensor(tpath, layer_name=name)
    labels = None
    if "labels_png" in doc:
        labels = load_image(_resolve(base, doc["labels_png"]))
    output_image = None
    if "output_png" in doc:
        output_image = load_image(_resolve(base, doc["output_png"]))
    return QuerySpec(image=image, tensors=tensors, labels=labels, output_image=output_image)


def filter_manifest(
    manifest_path: str | os.PathLike,
    out_path: str | os.PathLike,
    include: list[int] | None = None,
    exclude: list[int] | None = None,
    require_tags: list[str] | None = None,
) -> dict:
    """Write a derived manifest keeping a subset of pairs, ids re-densified.

    Retained pairs keep ascending original-id order; the returned mapping is
    {new_id: old_id}. File references are rewritten relative to the new
    manifest's directory. Raises EmptySetError when nothing survives.
    """
    manifest_path = Path(manifest_path)
    out_path = Path(out_path)
    doc = load_manifest(manifest_path)
    base = manifest_path.parent
    all_ids = {entry["id"] for entry in doc["pairs"]}

    for requested in (include or []) + (exclude or []):
        if requested not in all_ids:
            raise ConfigError(f"pair id {requested} does not exist in the manifest")

    keep = set(include) if include is not None else set(all_ids)
    if exclude:
        keep -= set(exclude)
    if require_tags:
        wanted = set(require_tags)
        keep = {
            entry["id"]
            for entry in doc["pairs"]
            if entry["id"] in keep and wanted <= set(entry.get("tags", []))
        }
    if not keep:
        raise EmptySetError("filter removed every pair")

    out_dir = out_path.parent.resolve()

    def rebase(rel: str) -> str:
        return os.path.relpath(_resolve(base, rel).resolve(), out_dir)

    retained = sorted(
        (entry for entry in doc["pairs"] if entry["id"] in keep),
        key=lambda entry: entry["id"],
    )
    mapping = {new: entry["id"] for new, entry in enumerate(retained)}
    new_pairs = []
    for new_id, entry in enumerate(retained):
        new_entry = dict(entry)
        new_entry["id"] = new_id
        new_entry["input_png"] = rebase(entry["input_png"])
        new_entry["output_png"] = rebase(entry["output_png"])
        new_entry["tensors"] = {k: rebase(v) for k, v in entry["tensors"].items()}
        new_pairs.append(new_entry)

    new_doc = {k: v for k, v in doc.items() if k != "pairs"}
    if "palette" in new_doc:
        new_doc["palette"] = rebase(new_doc["palette"])
    new_doc["pairs"] = new_pairs
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(new_doc, indent=2, sort_keys=True) + "\n")
    return {"manifest": str(out_path), "pairs": len(new_pairs), "mapping": mapping}
