"""Dense nearest-neighbor fields over hyperpatches: exhaustive and approximate.

The exhaustive search is the ground-truth oracle: per query cell, the global
argmin of cosine distance over every candidate pair and every valid position,
ties broken by ascending image id then row-major position. The approximate
search (``hpm_*``) alternates uniform random resampling with neighbor
propagation, PatchMatch-style, over the same candidate set.

Determinism contract
--------------------
Both searches share one distance kernel (pairwise dot products of pre-
normalized float64 patch rows via ``np.einsum``, clamped to [0, 2]); a given
(cell, pair, position) always evaluates to the same float, whichever path
asks. Randomness comes from per-cell SplitMix64 streams (`patchfield.rng`);
the per-cell draw order is:

* init: image slot (index into the candidate list as given), then position
  row, then position column — one bounded draw each;
* each iteration: the same three draws per random sample, ``samples`` times.

Propagation is double-buffered (reads the previous field, writes a new one)
and evaluates the four neighbor proposals in fixed order
(0,+1), (+1,0), (0,−1), (−1,0) with sequential strict adoption, so results
are independent of traversal order and of worker partitioning.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .database import TrainingDatabase
from .errors import ConfigError, EmptySetError
from .rng import CellStreams
from .tensors import ActivationTensor, LayerSpec, grid_shape, normalized_patch_matrix

#: offsets δ such that the neighbor at q+δ proposes its match shifted by −δ
PROPAGATION_OFFSETS = ((0, 1), (1, 0), (0, -1), (-1, 0))

#: positions per exhaustive-search distance chunk, bounding peak memory
_CHUNK = 4096

TraceFn = Callable[[str, int, np.ndarray], None]


@dataclass(frozen=True)
class Correspondence:
    """Best match of one query cell: training pair, position, distance."""

    train_image_id: int
    train_pos: tuple[int, int]
    distance: float


@dataclass
class NNField:
    """Dense correspondence grid for one query tensor at one layer.

    ``eval_count`` tallies every distance evaluation spent building the field
    (fields loaded from dumps carry 0 — the dump layout has no such slot).
    """

    layer_name: str
    ids: np.ndarray
    ys: np.ndarray
    xs: np.ndarray
    dist: np.ndarray
    eval_count: int = 0

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.ids.shape  # type: ignore[return-value]

    def cell(self, y: int, x: int) -> Correspondence:
        return Correspondence(
            train_image_id=int(self.ids[y, x]),
            train_pos=(int(self.ys[y, x]), int(self.xs[y, x])),
            distance=float(self.dist[y, x]),
        )

    def copy(self) -> "NNField":
        return NNField(
            self.layer_name,
            self.ids.copy(),
            self.ys.copy(),
            self.xs.copy(),
            self.dist.copy(),
            self.eval_count,
        )

    def same_matches(self, other: "NNField") -> bool:
        return (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.ys, other.ys)
            and np.array_equal(self.xs, other.xs)
        )


@dataclass(frozen=True)
class SearchConfig:
    """Semantic determinants of an approximate-search run."""

    candidate_image_ids: tuple[int, ...]
    iterations: int = 1024
    rng_seed: int = 0
    random_samples_per_cell_per_iter: int = 1

    def __post_init__(self):
        if not self.candidate_image_ids:
            raise EmptySetError("candidate image list must not be empty")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.random_samples_per_cell_per_iter < 0:
            raise ConfigError("random_samples_per_cell_per_iter must be >= 0")
        object.__setattr__(
            self, "candidate_image_ids", tuple(int(i) for i in self.candidate_image_ids)
        )


def _pair_distances(q_rows: np.ndarray, t_rows: np.ndarray) -> np.ndarray:
    """Distance for gathered (query row, train row) pairs: (m, k)² → (m,)."""
    return np.clip(1.0 - np.einsum("ik,ik->i", q_rows, t_rows), 0.0, 2.0)


def _cross_distances(q_rows: np.ndarray, t_rows: np.ndarray) -> np.ndarray:
    """Distance for the full cross product: (c, k)×(p, k) → (c, p)."""
    return np.clip(1.0 - np.einsum("ck,pk->cp", q_rows, t_rows), 0.0, 2.0)


class _SearchContext:
    """Precomputed arrays shared by all phases of one search run."""

    def __init__(
        self,
        query: ActivationTensor,
        db: TrainingDatabase,
        layer: LayerSpec,
        candidates: tuple[int, ...],
        build_stack: bool = True,
    ):
        if not candidates:
            raise EmptySetError("candidate image list must not be empty")
        unknown = [i for i in candidates if not 0 <= i < len(db)]
        if unknown:
            raise ConfigError(f"candidate ids not in database: {unknown}")
        if layer.layer_name not in db.layer_specs:
            raise ConfigError(f"database has no layer {layer.layer_name!r}")
        if db.layer_specs[layer.layer_name] != layer:
            raise ConfigError(
                f"layer spec for {layer.layer_name!r} differs from the database's"
            )

        self.layer = layer
        self.grid_h, self.grid_w = grid_shape(query, layer)
        self.n_cells = self.grid_h * self.grid_w
        self.query_n = normalized_patch_matrix(query, layer)

        self.cand_ids = np.asarray(candidates, dtype=np.int64)
        self.n_cand = len(candidates)
        self.pos_h, self.pos_w = db.positions_shape(layer.layer_name)
        self.n_pos = self.pos_h * self.pos_w
        # (n_cand · n_pos, k) stack in candidate-list order, for gathered evals
        self.train_n = (
            np.concatenate(
                [db.normalized_patches(layer.layer_name, i) for i in candidates]
            )
            if build_stack
            else None
        )
        self.slot_of_id = np.full(len(db), -1, dtype=np.int64)
        for slot, image_id in enumerate(candidates):
            self.slot_of_id[image_id] = slot
        self.db = db

    def eval_pairs(self, cell_idx: np.ndarray, slots, tys, txs) -> np.ndarray:
        rows = (np.asarray(slots) * self.n_pos + np.asarray(tys) * self.pos_w + txs)
        return _pair_distances(self.query_n[cell_idx], self.train_n[rows])

    def check_field(self, field: NNField) -> None:
        if field.grid_shape != (self.grid_h, self.grid_w):
            raise ConfigError(
                f"field grid {field.grid_shape} does not match query grid "
                f"{(self.grid_h, self.grid_w)}"
            )
        if field.layer_name and field.layer_name != self.layer.layer_name:
            raise ConfigError(
                f"field was built at layer {field.layer_name!r}, "
                f"search is at {self.layer.layer_name!r}"
            )
        if np.any(self.slot_of_id[field.ids.reshape(-1)] < 0):
            raise ConfigError("field references images outside the candidate set")


def _row_blocks(grid_h: int, threads: int) -> list[tuple[int, int]]:
    threads = max(1, min(threads, grid_h))
    step = -(-grid_h // threads)
    return [(a, min(a + step, grid_h)) for a in range(0, grid_h, step)]


def _run_blocks(fn, blocks: list[tuple[int, int]], threads: int) -> list:
    """Run fn over row blocks, serially or pooled; returns per-block results.

    Workers must touch only their own block's slice of any shared output.
    """
    if threads <= 1 or len(blocks) == 1:
        return [fn(block) for block in blocks]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


def exhaustive_search(
    query: ActivationTensor,
    db: TrainingDatabase,
    layer: LayerSpec,
    candidates: list[int] | tuple[int, ...],
    threads: int = 1,
) -> NNField:
    """Ground-truth field: per-cell global argmin over all candidate patches.

    Ties break by ascending image id, then row-major position, making the
    result unique and independent of chunking and worker partitioning.
    ``eval_count`` is exactly cells × Σ valid positions over candidates.
    """
    ctx = _SearchContext(
        query, db, layer, tuple(dict.fromkeys(candidates)), build_stack=False
    )
    ordered_ids = sorted(set(int(i) for i in ctx.cand_ids))

    best_dist = np.full(ctx.n_cells, np.inf)
    best_id = np.zeros(ctx.n_cells, dtype=np.int64)
    best_pos = np.zeros(ctx.n_cells, dtype=np.int64)

    def run_block(block: tuple[int, int]) -> None:
        lo, hi = block[0] * ctx.grid_w, block[1] * ctx.grid_w
        q = ctx.query_n[lo:hi]
        for image_id in ordered_ids:
            train_n = db.normalized_patches(layer.layer_name, image_id)
            for start in range(0, ctx.n_pos, _CHUNK):
                chunk = train_n[start : start + _CHUNK]
                dmat = _cross_distances(q, chunk)
                arg = np.argmin(dmat, axis=1)
                dmin = dmat[np.arange(len(q)), arg]
                better = dmin < best_dist[lo:hi]
                best_dist[lo:hi][better] = dmin[better]
                best_id[lo:hi][better] = image_id
                best_pos[lo:hi][better] = start + arg[better]

    _run_blocks(run_block, _row_blocks(ctx.grid_h, threads), threads)

    shape = (ctx.grid_h, ctx.grid_w)
    return NNField(
        layer_name=layer.layer_name,
        ids=best_id.reshape(shape),
        ys=(best_pos // ctx.pos_w).reshape(shape),
        xs=(best_pos % ctx.pos_w).reshape(shape),
        dist=best_dist.reshape(shape),
        eval_count=ctx.n_cells * ctx.n_pos * len(ordered_ids),
    )


def _init_phase(ctx: _SearchContext, streams: CellStreams, threads: int) -> NNField:
    slots = np.zeros(ctx.n_cells, dtype=np.int64)
    tys = np.zeros(ctx.n_cells, dtype=np.int64)
    txs = np.zeros(ctx.n_cells, dtype=np.int64)
    dist = np.zeros(ctx.n_cells)

    def run_block(block: tuple[int, int]) -> None:
        lo, hi = block[0] * ctx.grid_w, block[1] * ctx.grid_w
        sel = slice(lo, hi)
        slots[sel] = streams.draw_below(ctx.n_cand, sel)
        tys[sel] = streams.draw_below(ctx.pos_h, sel)
        txs[sel] = streams.draw_below(ctx.pos_w, sel)
        dist[sel] = ctx.eval_pairs(np.arange(lo, hi), slots[sel], tys[sel], txs[sel])

    _run_blocks(run_block, _row_blocks(ctx.grid_h, threads), threads)
    shape = (ctx.grid_h, ctx.grid_w)
    return NNField(
        layer_name=ctx.layer.layer_name,
        ids=ctx.cand_ids[slots].reshape(shape),
        ys=tys.reshape(shape),
        xs=txs.reshape(shape),
        dist=dist.reshape(shape),
        eval_count=ctx.n_cells,
    )


def hpm_init(
    query: ActivationTensor,
    db: TrainingDatabase,
    layer: LayerSpec,
    config: SearchConfig,
    streams: CellStreams | None = None,
    threads: int = 1,
) -> NNField:
    """Uniformly random field over (candidate, position), true distances stored."""
    ctx = _SearchContext(query, db, layer, config.candidate_image_ids)
    if streams is None:
        streams = CellStreams(config.rng_seed, ctx.n_cells)
    return _init_phase(ctx, streams, threads)


def _random_search_phase(
    ctx: _SearchContext,
    field: NNField,
    streams: CellStreams,
    samples: int,
    threads: int,
) -> NNField:
    out = field.copy()
    ids = out.ids.reshape(-1)
    ys = out.ys.reshape(-1)
    xs = out.xs.reshape(-1)
    dist = out.dist.reshape(-1)

    def run_block(block: tuple[int, int]) -> None:
        lo, hi = block[0] * ctx.grid_w, block[1] * ctx.grid_w
        sel = slice(lo, hi)
        cells = np.arange(lo, hi)
        for _ in range(samples):
            slots = streams.draw_below(ctx.n_cand, sel)
            tys = streams.draw_below(ctx.pos_h, sel)
            txs = streams.draw_below(ctx.pos_w, sel)
            d = ctx.eval_pairs(cells, slots, tys, txs)
            adopt = d < dist[sel]
            rows = cells[adopt]
            ids[rows] = ctx.cand_ids[slots[adopt]]
            ys[rows] = tys[adopt]
            xs[rows] = txs[adopt]
            dist[rows] = d[adopt]

    _run_blocks(run_block, _row_blocks(ctx.grid_h, threads), threads)
    out.eval_count = field.eval_count + ctx.n_cells * samples
    return out


def hpm_random_search(
    field: NNField,
    query: ActivationTensor,
    db: TrainingDatabase,
    layer: LayerSpec,
    config: SearchConfig,
    streams: CellStreams,
    threads: int = 1,
) -> NNField:
    """One random-resampling pass; strictly better samples are adopted."""
    ctx = _SearchContext(query, db, layer, config.candidate_image_ids)
    ctx.check_field(field)
    return _random_search_phase(
        ctx, field, streams, config.random_samples_per_cell_per_iter, threads
    )


def _propagate_phase(ctx: _SearchContext, field: NNField, threads: int) -> NNField:
    out = field.copy()
    cell_y, cell_x = np.mgrid[0 : ctx.grid_h, 0 : ctx.grid_w]

    def run_block(block: tuple[int, int]) -> int:
        evals = 0
        r0, r1 = block
        cy = cell_y[r0:r1]
        cx = cell_x[r0:r1]
        for dy, dx in PROPAGATION_OFFSETS:
            ny, nx = cy + dy, cx + dx
            valid = (0 <= ny) & (ny < ctx.grid_h) & (0 <= nx) & (nx < ctx.grid_w)
            nyc = np.clip(ny, 0, ctx.grid_h - 1)
            nxc = np.clip(nx, 0, ctx.grid_w - 1)
            pty = field.ys[nyc, nxc] - dy
            ptx = field.xs[nyc, nxc] - dx
            valid &= (0 <= pty) & (pty < ctx.pos_h) & (0 <= ptx) & (ptx < ctx.pos_w)
            if not valid.any():
                continue
            rows = (cy[valid] * ctx.grid_w + cx[valid])
            prop_ids = field.ids[nyc, nxc][valid]
            d = ctx.eval_pairs(
                rows, ctx.slot_of_id[prop_ids], pty[valid], ptx[valid]
            )
            evals += int(valid.sum())
            flat_d = out.dist.reshape(-1)
            adopt = d < flat_d[rows]
            rows = rows[adopt]
            out.ids.reshape(-1)[rows] = prop_ids[adopt]
            out.ys.reshape(-1)[rows] = pty[valid][adopt]
            out.xs.reshape(-1)[rows] = ptx[valid][adopt]
            flat_d[rows] = d[adopt]
        return evals

    block_evals = _run_blocks(run_block, _row_blocks(ctx.grid_h, threads), threads)
    out.eval_count = field.eval_count + sum(block_evals)
    return out


def hpm_propagate(
    field: NNField,
    query: ActivationTensor,
    db: TrainingDatabase,
    layer: LayerSpec,
    parity: Literal["even", "odd"] = "even",
    threads: int = 1,
) -> NNField:
    """Neighbor-propagation pass: the neighbor at q+δ proposes its match
    shifted by −δ; strictly better proposals win, out-of-bounds are skipped.

    Double buffering makes the result independent of traversal order, so
    ``parity`` is accepted as a scan-direction hint and changes nothing.
    """
    if parity not in ("even", "odd"):
        raise ConfigError(f"parity must be 'even' or 'odd', got {parity!r}")
    ctx = _SearchContext(query, db, layer, tuple(dict.fromkeys(field.ids.reshape(-1).tolist())))
    ctx.check_field(field)
    return _propagate_phase(ctx, field, threads)


def hpm_run(
    query: ActivationTensor,
    db: TrainingDatabase,
    layer: LayerSpec,
    config: SearchConfig,
    threads: int = 1,
    trace: TraceFn | None = None,
    initial_field: NNField | None = None,
) -> NNField:
    """Random init, then `iterations` rounds of (random search; propagation).

    ``trace(phase, round_index, dist_snapshot)`` fires after init and after
    each phase, for convergence instrumentation. ``initial_field`` replaces
    the random init (a test hook for fixed-point checks); it must reference
    only candidate images.
    """
    ctx = _SearchContext(query, db, layer, config.candidate_image_ids)
    streams = CellStreams(config.rng_seed, ctx.n_cells)

    if initial_field is None:
        field = _init_phase(ctx, streams, threads)
    else:
        ctx.check_field(initial_field)
        field = initial_field.copy()
    if trace:
        trace("init", 0, field.dist.copy())

    samples = config.random_samples_per_cell_per_iter
    for round_index in range(1, config.iterations + 1):
        field = _random_search_phase(ctx, field, streams, samples, threads)
        if trace:
            trace("random_search", round_index, field.dist.copy())
        field = _propagate_phase(ctx, field, threads)
        if trace:
            trace("propagate", round_index, field.dist.copy())
    return field
