"""Shared fixtures and independent oracles.

The oracles here are deliberately written without touching the production
search/compose code paths: plain Python loops, math.fsum dot products, and
explicit tie-breaking. Production results are checked against them, never
the other way around.
"""

import math
from pathlib import Path

import numpy as np
import pytest

from patchfield import ActivationTensor, LayerSpec, TrainingDatabase, TrainingPair

FIXTURES = Path(__file__).parent / "fixtures"


def make_tensor(layer_name, h, w, d, seed):
    rng = np.random.default_rng(seed)
    return ActivationTensor(layer_name, rng.standard_normal((h, w, d)).astype(np.float32))


def make_db(
    n_pairs=4,
    tensor_h=8,
    tensor_w=8,
    depth=4,
    hyperpatch=(2, 2),
    patch_size=2,
    scale=1,
    layer_name="feat",
    seed=0,
    output_colors=None,
):
    """In-memory synthetic database with Gaussian tensors and noise images."""
    rng = np.random.default_rng(seed)
    spec = LayerSpec(layer_name, hyperpatch[0], hyperpatch[1], depth, patch_size, scale)
    img_h, img_w = tensor_h * scale, tensor_w * scale
    pairs = []
    for pid in range(n_pairs):
        tensor = ActivationTensor(
            layer_name, rng.standard_normal((tensor_h, tensor_w, depth)).astype(np.float32)
        )
        input_img = rng.integers(0, 256, (img_h, img_w, 3), dtype=np.uint8)
        if output_colors is not None and output_colors[pid] is not None:
            base = np.array(output_colors[pid], dtype=np.int64)
            noise = rng.integers(-20, 21, (img_h, img_w, 3))
            output_img = np.clip(base + noise, 0, 255).astype(np.uint8)
        else:
            output_img = rng.integers(0, 256, (img_h, img_w, 3), dtype=np.uint8)
        pairs.append(TrainingPair(pid, input_img, output_img, {layer_name: tensor}))
    return TrainingDatabase(pairs, {layer_name: spec}, layer_name), spec


@pytest.fixture
def small_db():
    return make_db(n_pairs=4, tensor_h=8, tensor_w=8, depth=4, seed=0)


def fsum_cosine_distance(a, b):
    """Reference cosine distance on flat float sequences, fsum accumulation."""
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(x * x for x in b))
    if na < 1e-12 or nb < 1e-12:
        return 1.0
    d = 1.0 - math.fsum(x * y for x, y in zip(a, b)) / (na * nb)
    return min(max(d, 0.0), 2.0)


def patch_values(tensor, spec, y, x):
    return tensor.values[y : y + spec.hyperpatch_h, x : x + spec.hyperpatch_w, :].reshape(-1)


def brute_force_field(query, db, spec, candidates):
    """Triple-loop exhaustive oracle: returns (ids, ys, xs, dist) arrays.

    Iterates candidate ids ascending, positions row-major, adopting only on
    strict improvement, which realizes the documented tie-break directly.
    """
    gh = query.height - spec.hyperpatch_h + 1
    gw = query.width - spec.hyperpatch_w + 1
    ids = np.zeros((gh, gw), dtype=np.int64)
    ys = np.zeros((gh, gw), dtype=np.int64)
    xs = np.zeros((gh, gw), dtype=np.int64)
    dist = np.full((gh, gw), np.inf)
    for gy in range(gh):
        for gx in range(gw):
            q = patch_values(query, spec, gy, gx)
            for image_id in sorted(set(candidates)):
                tensor = db.pairs[image_id].tensors[spec.layer_name]
                ph = tensor.height - spec.hyperpatch_h + 1
                pw = tensor.width - spec.hyperpatch_w + 1
                for ty in range(ph):
                    for tx in range(pw):
                        d = fsum_cosine_distance(q, patch_values(tensor, spec, ty, tx))
                        if d < dist[gy, gx]:
                            dist[gy, gx] = d
                            ids[gy, gx] = image_id
                            ys[gy, gx] = ty
                            xs[gy, gx] = tx
    return ids, ys, xs, dist


def brute_force_reconstruct(field, db, spec, source):
    """Independent composer: per-pixel fsum averaging, round-half-up."""
    img_h, img_w = db.image_height, db.image_width
    sums = [[[0.0] * 3 for _ in range(img_w)] for _ in range(img_h)]
    counts = [[0] * img_w for _ in range(img_h)]
    gh, gw = field.ids.shape
    for gy in range(gh):
        for gx in range(gw):
            pair = db.pairs[int(field.ids[gy, gx])]
            src = pair.input_image if source == "input" else pair.output_image
            top, left = gy * spec.scale, gx * spec.scale
            ty = int(field.ys[gy, gx]) * spec.scale
            tx = int(field.xs[gy, gx]) * spec.scale
            for dy in range(spec.patch_size):
                for dx in range(spec.patch_size):
                    py, px = top + dy, left + dx
                    sy, sx = ty + dy, tx + dx
                    if py >= img_h or px >= img_w or sy >= img_h or sx >= img_w:
                        continue
                    for c in range(3):
                        sums[py][px][c] += float(src[sy, sx, c])
                    counts[py][px] += 1
    out = np.zeros((img_h, img_w, 3), dtype=np.uint8)
    uncovered = 0
    for py in range(img_h):
        for px in range(img_w):
            if counts[py][px] == 0:
                uncovered += 1
                continue
            for c in range(3):
                value = math.floor(sums[py][px][c] / counts[py][px] + 0.5)
                out[py, px, c] = min(max(value, 0), 255)
    return out, uncovered
