"""Activation tensors, hyperpatch extraction, cosine distance, patch geometry.

An activation tensor is one layer's H×W×D float volume for one image. A
hyperpatch is a small h×w×D sub-tensor anchored at a cell position; it is the
feature representation of the image patch that position maps to. Everything
here is pure and operates on immutable arrays, so shared tensors are safe for
unrestricted concurrent reads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, NonFiniteValueError, ShapeError

#: Norms below this are treated as dead activations (see cosine_distance).
NORM_EPS = 1e-12


class ActivationTensor:
    """One layer's H×W×D float32 activation volume, immutable after load."""

    __slots__ = ("layer_name", "values")

    def __init__(self, layer_name: str, values: np.ndarray):
        arr = np.ascontiguousarray(values, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(
                f"layer {layer_name!r}: tensor must be H×W×D with all dims >= 1, "
                f"got shape {tuple(arr.shape)}"
            )
        if not np.isfinite(arr).all():
            raise NonFiniteValueError(
                f"layer {layer_name!r}: tensor contains non-finite values"
            )
        arr.flags.writeable = False
        self.layer_name = layer_name
        self.values = arr

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def depth(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ActivationTensor)
            and self.layer_name == other.layer_name
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return f"ActivationTensor({self.layer_name!r}, {self.values.shape})"


@dataclass(frozen=True)
class LayerSpec:
    """Per-layer geometry: hyperpatch extent, depth, and cell→pixel mapping.

    ``scale`` is the number of image pixels spanned per tensor cell and
    ``patch_size`` the side of the square image patch a cell anchors. They are
    stored explicitly rather than inferred because published layer tables and
    actual tensor dimensions cannot always be reconciled.
    """

    layer_name: str
    hyperpatch_h: int
    hyperpatch_w: int
    depth: int
    patch_size: int
    scale: int

    def __post_init__(self):
        for name in ("hyperpatch_h", "hyperpatch_w", "depth", "patch_size", "scale"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ShapeError(
                    f"layer {self.layer_name!r}: {name} must be an integer >= 1, got {value!r}"
                )


@dataclass(frozen=True)
class HyperPatchView:
    """A zero-copy window over a tensor: h×w cells at (y, x), full depth."""

    tensor: ActivationTensor
    y: int
    x: int
    h: int
    w: int

    @property
    def values(self) -> np.ndarray:
        return self.tensor.values[self.y : self.y + self.h, self.x : self.x + self.w, :]

    def flat(self) -> np.ndarray:
        """Row-major (h, w, D) flattening as float64."""
        return self.values.reshape(-1).astype(np.float64)


@dataclass(frozen=True)
class PatchRect:
    """Square image-pixel rectangle anchored at its top-left corner."""

    top: int
    left: int
    size: int


def extract_hyperpatch(
    tensor: ActivationTensor, pos: tuple[int, int], spec: LayerSpec
) -> HyperPatchView:
    """View of the hyperpatch anchored at cell ``pos`` (top-left)."""
    y, x = pos
    if spec.depth != tensor.depth:
        raise ShapeError(
            f"layer {spec.layer_name!r}: spec depth {spec.depth} != tensor depth {tensor.depth}"
        )
    if (
        y < 0
        or x < 0
        or y + spec.hyperpatch_h > tensor.height
        or x + spec.hyperpatch_w > tensor.width
    ):
        raise BoundsError(
            f"layer {spec.layer_name!r}: hyperpatch "
            f"{spec.hyperpatch_h}×{spec.hyperpatch_w} at ({y}, {x}) exceeds "
            f"tensor {tensor.height}×{tensor.width}"
        )
    return HyperPatchView(tensor, y, x, spec.hyperpatch_h, spec.hyperpatch_w)


def cosine_distance(a: HyperPatchView, b: HyperPatchView) -> float:
    """1 − cosine similarity of the flattened views, clamped to [0, 2].

    A view whose norm falls below ``NORM_EPS`` (a dead activation) scores the
    maximally uninformative 1.0 against everything, so it can never beat a
    genuine match with distance < 1.
    """
    if (a.h, a.w, a.tensor.depth) != (b.h, b.w, b.tensor.depth):
        raise ShapeError(
            f"extent mismatch: {(a.h, a.w, a.tensor.depth)} vs {(b.h, b.w, b.tensor.depth)}"
        )
    va = a.flat()
    vb = b.flat()
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < NORM_EPS or nb < NORM_EPS:
        return 1.0
    d = 1.0 - float(va @ vb) / (na * nb)
    return min(max(d, 0.0), 2.0)


def layer_geometry(spec: LayerSpec, pos: tuple[int, int]) -> PatchRect:
    """Image rectangle anchored by cell ``pos``: top-left pos·scale, side patch_size.

    Pure arithmetic; clipping to image bounds happens at composition time.
    """
    y, x = pos
    return PatchRect(top=y * spec.scale, left=x * spec.scale, size=spec.patch_size)


def grid_shape(tensor: ActivationTensor, spec: LayerSpec) -> tuple[int, int]:
    """Dense stride-1 hyperpatch grid: (H−h+1, W−w+1)."""
    gh = tensor.height - spec.hyperpatch_h + 1
    gw = tensor.width - spec.hyperpatch_w + 1
    if gh < 1 or gw < 1 or spec.depth != tensor.depth:
        raise ShapeError(
            f"layer {spec.layer_name!r}: tensor {tensor.shape} cannot host "
            f"{spec.hyperpatch_h}×{spec.hyperpatch_w}×{spec.depth} hyperpatches"
        )
    return gh, gw


def patch_matrix(tensor: ActivationTensor, spec: LayerSpec) -> np.ndarray:
    """All stride-1 hyperpatches as rows: (grid_h·grid_w, h·w·D) float64.

    Row order is row-major over grid positions; each row is the (h, w, D)
    row-major flattening, matching ``HyperPatchView.flat``.
    """
    gh, gw = grid_shape(tensor, spec)
    win = np.lib.stride_tricks.sliding_window_view(
        tensor.values, (spec.hyperpatch_h, spec.hyperpatch_w), axis=(0, 1)
    )
    # sliding_window_view yields (gh, gw, D, h, w); reorder to flatten as (h, w, D)
    mat = win.transpose(0, 1, 3, 4, 2).reshape(gh * gw, -1)
    return np.ascontiguousarray(mat, dtype=np.float64)


def normalized_patch_matrix(tensor: ActivationTensor, spec: LayerSpec) -> np.ndarray:
    """`patch_matrix` with unit-norm rows; rows under NORM_EPS become zero.

    Zeroed rows make the shared distance kernel return exactly 1.0 for dead
    activations (1 − 0), matching ``cosine_distance``.
    """
    mat = patch_matrix(tensor, spec)
    norms = np.linalg.norm(mat, axis=1)
    dead = norms < NORM_EPS
    norms[dead] = 1.0
    mat /= norms[:, None]
    mat[dead] = 0.0
    return mat
