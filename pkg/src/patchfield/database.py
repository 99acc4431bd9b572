"""Training database: pixel-aligned image pairs, tensors, global descriptors.

The database is immutable after construction; concurrent readers need no
locks (the per-layer patch-matrix cache is built under a lock on first use).
Global pruning keeps the exact top-k most similar pairs under cosine distance
on flattened descriptor-layer tensors — N is small enough that exact search
is the right tool.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptySetError, ShapeError
from .tensors import (
    NORM_EPS,
    ActivationTensor,
    LayerSpec,
    grid_shape,
    normalized_patch_matrix,
)


@dataclass
class TrainingPair:
    """One pixel-aligned (input, output) exemplar with its layer tensors."""

    image_id: int
    input_image: np.ndarray
    output_image: np.ndarray
    tensors: dict[str, ActivationTensor]
    global_descriptor: np.ndarray | None = None
    tags: tuple[str, ...] = ()


def flatten_descriptor(tensor: ActivationTensor) -> np.ndarray:
    """Whole-tensor global descriptor: row-major (H, W, D) flattening."""
    return np.asarray(tensor.values, dtype=np.float32).reshape(-1).copy()


class TrainingDatabase:
    """Validated, immutable collection of training pairs at fixed layer specs."""

    def __init__(
        self,
        pairs: list[TrainingPair],
        layer_specs: dict[str, LayerSpec],
        descriptor_layer: str,
    ):
        if not pairs:
            raise EmptySetError("training database needs at least one pair")
        if descriptor_layer not in layer_specs:
            raise ConfigError(
                f"descriptor layer {descriptor_layer!r} is not a declared layer"
            )

        ids = sorted(p.image_id for p in pairs)
        if ids != list(range(len(pairs))):
            raise ConfigError(f"image ids must be dense 0..{len(pairs) - 1}, got {ids}")
        self.pairs: list[TrainingPair] = sorted(pairs, key=lambda p: p.image_id)
        self.layer_specs = dict(layer_specs)
        self.descriptor_layer = descriptor_layer

        ref = self.pairs[0].input_image
        self.image_height, self.image_width = ref.shape[0], ref.shape[1]
        self._layer_dims: dict[str, tuple[int, int, int]] = {}
        for pair in self.pairs:
            for img, role in ((pair.input_image, "input"), (pair.output_image, "output")):
                if img.shape[:2] != (self.image_height, self.image_width):
                    raise ShapeError(
                        f"pair {pair.image_id}: {role} image {img.shape[:2]} does not "
                        f"match database image size "
                        f"{(self.image_height, self.image_width)}"
                    )
            for name, spec in self.layer_specs.items():
                tensor = pair.tensors.get(name)
                if tensor is None:
                    raise ConfigError(f"pair {pair.image_id}: missing layer {name!r}")
                grid_shape(tensor, spec)  # validates depth and hyperpatch fit
                dims = self._layer_dims.setdefault(name, tensor.shape)
                if tensor.shape != dims:
                    raise ShapeError(
                        f"pair {pair.image_id} layer {name!r}: tensor {tensor.shape} "
                        f"differs from the layer's established {dims}"
                    )
            if pair.global_descriptor is None:
                pair.global_descriptor = flatten_descriptor(
                    pair.tensors[descriptor_layer]
                )

        self._descriptors = np.stack(
            [np.asarray(p.global_descriptor, dtype=np.float64) for p in self.pairs]
        )
        norms = np.linalg.norm(self._descriptors, axis=1)
        dead = norms < NORM_EPS
        norms[dead] = 1.0
        self._descriptors_n = self._descriptors / norms[:, None]
        self._descriptors_n[dead] = 0.0

        self._patch_cache: dict[tuple[str, int], np.ndarray] = {}
        self._cache_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.pairs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrainingDatabase):
            return NotImplemented
        return (
            self.layer_specs == other.layer_specs
            and self.descriptor_layer == other.descriptor_layer
            and len(self) == len(other)
            and all(
                np.array_equal(a.input_image, b.input_image)
                and np.array_equal(a.output_image, b.output_image)
                and a.tags == b.tags
                and a.tensors == b.tensors
                and np.array_equal(a.global_descriptor, b.global_descriptor)
                for a, b in zip(self.pairs, other.pairs)
            )
        )

    def layer_tensor_dims(self, layer_name: str) -> tuple[int, int, int]:
        return self._layer_dims[layer_name]

    def positions_shape(self, layer_name: str) -> tuple[int, int]:
        """Valid hyperpatch anchor grid of this layer's training tensors."""
        spec = self.layer_specs[layer_name]
        h, w, _ = self._layer_dims[layer_name]
        return h - spec.hyperpatch_h + 1, w - spec.hyperpatch_w + 1

    def normalized_patches(self, layer_name: str, image_id: int) -> np.ndarray:
        """Cached (positions, h·w·D) unit-norm patch matrix for one pair."""
        key = (layer_name, image_id)
        cached = self._patch_cache.get(key)
        if cached is not None:
            return cached
        with self._cache_lock:
            cached = self._patch_cache.get(key)
            if cached is None:
                spec = self.layer_specs[layer_name]
                tensor = self.pairs[image_id].tensors[layer_name]
                cached = normalized_patch_matrix(tensor, spec)
                cached.flags.writeable = False
                self._patch_cache[key] = cached
        return cached

    def global_descriptor(self, tensor: ActivationTensor) -> np.ndarray:
        """Descriptor for a query tensor; must come from the descriptor layer."""
        if tensor.layer_name != self.descriptor_layer:
            raise ConfigError(
                f"global descriptors come from layer {self.descriptor_layer!r}, "
                f"got a tensor from {tensor.layer_name!r}"
            )
        return flatten_descriptor(tensor)

    def top_k_neighbors(self, query_descriptor: np.ndarray, k: int) -> list[int]:
        """Image ids of the k most similar pairs, ascending cosine distance.

        Ties break toward the lower image id, which makes the ordering total:
        the k'-list is always a prefix of the k-list for k' < k.
        """
        if k < 1:
            raise ConfigError(f"k must be >= 1, got {k}")
        query = np.asarray(query_descriptor, dtype=np.float64).reshape(-1)
        if query.shape[0] != self._descriptors.shape[1]:
            raise ShapeError(
                f"descriptor length {query.shape[0]} != stored length "
                f"{self._descriptors.shape[1]}"
            )
        qn = float(np.linalg.norm(query))
        if qn < NORM_EPS:
            dists = np.ones(len(self.pairs))
        else:
            sims = np.einsum("ik,k->i", self._descriptors_n, query / qn)
            dists = np.clip(1.0 - sims, 0.0, 2.0)
        order = np.argsort(dists, kind="stable")
        return [int(i) for i in order[: min(k, len(self.pairs))]]
