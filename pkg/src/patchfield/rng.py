"""Deterministic random streams for reproducible field search.

Reproducibility across runs, thread counts, and reimplementations is part of
this package's external contract, so the generator is pinned exactly:

* Generator: SplitMix64. State advances by adding the 64-bit constant
  ``0x9E3779B97F4A7C15`` (mod 2**64); the output word is the new state mixed
  through ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
  z *= 0x94D049BB133111EB; z ^= z >> 31`` (all mod 2**64).
* Bounded draws ``below(n)`` use unbiased rejection sampling: draw 64-bit
  words until one is strictly below ``floor(2**64 / n) * n``, then return
  ``word % n``. Every bounded draw consumes at least one word, including
  the degenerate ``n == 1`` case.
* Per-cell streams: the field cell at row-major index ``i`` owns an
  independent stream whose initial state is ``(seed XOR i) mod 2**64``.
  Because each cell consumes only its own stream, any partition of cells
  across workers reproduces the single-threaded sequence bit for bit.

Search code documents the per-cell draw order (see `patchfield.search`).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_WORD_SPAN = 1 << 64


class SplitMix64:
    """Scalar reference generator; the vectorized streams must match it."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        if n < 1:
            raise ValueError(f"bound must be >= 1, got {n}")
        limit = (_WORD_SPAN // n) * n
        while True:
            word = self.next_u64()
            if word < limit:
                return word % n


def _mix(state: np.ndarray) -> np.ndarray:
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class CellStreams:
    """One SplitMix64 stream per field cell, advanced in lockstep.

    ``states[i]`` is the current state of cell ``i``'s stream (row-major cell
    indexing). Draws may be restricted to a subset of cells; untouched cells
    keep their stream position, which is what makes row-partitioned parallel
    search bit-identical to the serial run.
    """

    def __init__(self, seed: int, n_cells: int):
        if n_cells < 1:
            raise ValueError("need at least one cell")
        base = np.uint64(seed & _MASK64)
        self.states = base ^ np.arange(n_cells, dtype=np.uint64)

    def draw_below(self, n: int, sel: slice | np.ndarray = slice(None)) -> np.ndarray:
        """One bounded draw per selected cell, unbiased via rejection."""
        if n < 1:
            raise ValueError(f"bound must be >= 1, got {n}")
        limit = (_WORD_SPAN // n) * n
        with np.errstate(over="ignore"):
            idx = np.arange(len(self.states), dtype=np.intp)[sel]
            out = np.zeros(len(idx), dtype=np.int64)
            pending = np.ones(len(idx), dtype=bool)
            while pending.any():
                live = idx[pending]
                self.states[live] += np.uint64(_GAMMA)
                words = _mix(self.states[live])
                if limit == _WORD_SPAN:
                    accepted = np.ones(len(live), dtype=bool)
                else:
                    accepted = words < np.uint64(limit)
                slots = np.nonzero(pending)[0][accepted]
                out[slots] = (words[accepted] % np.uint64(n)).astype(np.int64)
                pending[slots] = False
        return out
