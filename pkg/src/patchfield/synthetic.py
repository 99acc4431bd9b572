"""Generate small file-backed datasets for tests, demos, and benchmarks.

Tensors are seeded Gaussian noise, which makes hyperpatches globally unique
with overwhelming probability; images are seeded uint8 noise, optionally
biased toward a per-pair color on the output side (handy for exercising
training-set filtering).
"""

from __future__ import annotations

import argparse
import json
import os
from pathlib import Path

import numpy as np

from .metrics import ClassPalette
from .store import save_image, write_tensor
from .tensors import ActivationTensor

DEFAULT_PALETTE = ClassPalette(
    names=("background", "wall", "window", "door", "roof", "sky"),
    colors=np.array(
        [(0, 0, 0), (200, 60, 60), (60, 60, 200), (220, 220, 60), (60, 200, 60), (90, 200, 255)],
        dtype=np.uint8,
    ),
)


def make_dataset(
    out_dir: str | os.PathLike,
    n_pairs: int = 4,
    tensor_h: int = 8,
    tensor_w: int = 8,
    depth: int = 4,
    hyperpatch: tuple[int, int] = (2, 2),
    patch_size: int = 2,
    scale: int = 1,
    layer_name: str = "feat",
    seed: int = 0,
    output_colors: list[tuple[int, int, int]] | None = None,
    tags: list[list[str]] | None = None,
    write_palette: bool = True,
) -> Path:
    """Write images, tensors, and a manifest; returns the manifest path.

    Image size is (tensor_h·scale) × (tensor_w·scale). When ``output_colors``
    gives pair i a color, its output image is that color plus mild noise;
    otherwise outputs are plain noise like the inputs.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    img_h, img_w = tensor_h * scale, tensor_w * scale

    pairs = []
    for pid in range(n_pairs):
        input_img = rng.integers(0, 256, size=(img_h, img_w, 3), dtype=np.uint8)
        if output_colors is not None and output_colors[pid] is not None:
            base = np.array(output_colors[pid], dtype=np.int64)
            noise = rng.integers(-20, 21, size=(img_h, img_w, 3))
            output_img = np.clip(base[None, None, :] + noise, 0, 255).astype(np.uint8)
        else:
            output_img = rng.integers(0, 256, size=(img_h, img_w, 3), dtype=np.uint8)
        tensor = ActivationTensor(
            layer_name,
            rng.standard_normal((tensor_h, tensor_w, depth)).astype(np.float32),
        )
        input_path = out / "images" / f"{pid:03d}_input.png"
        output_path = out / "images" / f"{pid:03d}_output.png"
        tensor_path = out / "tensors" / f"{pid:03d}_{layer_name}.chpt"
        save_image(input_img, input_path)
        save_image(output_img, output_path)
        write_tensor(tensor, tensor_path)
        entry = {
            "id": pid,
            "input_png": str(input_path.relative_to(out)),
            "output_png": str(output_path.relative_to(out)),
            "tensors": {layer_name: str(tensor_path.relative_to(out))},
        }
        if tags is not None and tags[pid]:
            entry["tags"] = list(tags[pid])
        pairs.append(entry)

    doc = {
        "image_size": {"w": img_w, "h": img_h},
        "layers": [
            {
                "name": layer_name,
                "hyperpatch": [hyperpatch[0], hyperpatch[1], depth],
                "patch_size": patch_size,
                "scale": scale,
                "role": "descriptor",
            }
        ],
        "pairs": pairs,
    }
    if write_palette:
        DEFAULT_PALETTE.to_json(out / "palette.json")
        doc["palette"] = "palette.json"
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest_path


def write_query_spec(
    manifest_path: str | os.PathLike, pair_id: int, out_path: str | os.PathLike
) -> Path:
    """Emit a query-spec JSON referencing one manifest pair's files."""
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    entry = next(p for p in doc["pairs"] if p["id"] == pair_id)
    base = manifest_path.parent
    out_path = Path(out_path)
    out_dir = out_path.parent.resolve()

    def rel(p: str) -> str:
        return os.path.relpath((base / p).resolve(), out_dir)

    spec = {
        "input_png": rel(entry["input_png"]),
        "output_png": rel(entry["output_png"]),
        "tensors": {k: rel(v) for k, v in entry["tensors"].items()},
    }
    out_path.write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n")
    return out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Generate a small synthetic dataset (images, tensors, manifest)."
    )
    parser.add_argument("out_dir")
    parser.add_argument("--pairs", type=int, default=4)
    parser.add_argument("--tensor-size", type=int, default=8, help="tensor cells per side")
    parser.add_argument("--depth", type=int, default=4)
    parser.add_argument("--patch-size", type=int, default=2)
    parser.add_argument("--scale", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    manifest = make_dataset(
        args.out_dir,
        n_pairs=args.pairs,
        tensor_h=args.tensor_size,
        tensor_w=args.tensor_size,
        depth=args.depth,
        patch_size=args.patch_size,
        scale=args.scale,
        seed=args.seed,
    )
    query = write_query_spec(manifest, 0, Path(args.out_dir) / "query_0.json")
    print(json.dumps({"manifest": str(manifest), "query": str(query)}, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
