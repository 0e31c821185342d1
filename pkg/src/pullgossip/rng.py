"""Counter-based randomness.

Every random quantity in a run is a pure function of
(master seed, purpose, round, agent, slot).  That gives three properties the
simulations lean on:

* replay: the same seed reproduces a run bit for bit,
* order independence: results cannot depend on the order agents are visited,
* stream splitting without shared state: any worker can compute any draw.

The mixer is the splitmix64 finalizer applied to a keyed counter.  It is a
few numpy ops, vectorizes over (agent, slot) grids, and is more than good
enough statistically for simulation sampling (the engine's uniformity is
checked by a chi-square test in the suite).
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# one draw position per (agent, slot); slots within a round stay below this
_SLOT_STRIDE = 1 << 20

# purpose tags keep independent uses of randomness in disjoint streams
PURPOSE_TARGETS = 1
PURPOSE_BYZANTINE = 2
PURPOSE_INIT = 3
PURPOSE_UPDATE = 4
PURPOSE_ROLES = 5


def _mix_int(z: int) -> int:
    """Scalar splitmix64 finalizer over python ints."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _mix_u64(z: np.ndarray) -> np.ndarray:
    """Vector splitmix64 finalizer; z is uint64 and wraps mod 2^64."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def stream_base(master_seed: int, purpose: int, round_index: int) -> int:
    """Fold (seed, purpose, round) into a 64-bit stream base."""
    h = _mix_int(master_seed ^ 0x5851F42D4C957F2D)
    h = _mix_int(h + _GOLDEN + purpose)
    h = _mix_int(h + _GOLDEN + round_index)
    return h


def draw_words(master_seed: int, purpose: int, round_index: int,
               agents: np.ndarray, slots: int) -> np.ndarray:
    """uint64 words of shape (len(agents), slots)."""
    base = stream_base(master_seed, purpose, round_index)
    pos = agents.astype(np.uint64)[:, None] * np.uint64(_SLOT_STRIDE)
    pos = pos + np.arange(1, slots + 1, dtype=np.uint64)[None, :]
    return _mix_u64(np.uint64(base) + np.uint64(_GOLDEN) * pos)


def draw_ints(master_seed: int, purpose: int, round_index: int,
              agents: np.ndarray, slots: int, bound: int) -> np.ndarray:
    """Uniform ints in [0, bound), shape (len(agents), slots).

    Plain modulo; the bias is bound/2^64 which is far below anything the
    statistical checks in this package could resolve.
    """
    if bound <= 0:
        raise ValueError(f"bound must be positive, got {bound}")
    return (draw_words(master_seed, purpose, round_index, agents, slots)
            % np.uint64(bound)).astype(np.int64)


class AgentStream:
    """Per-(round, agent) view of the counter stream, one draw per slot.

    Produces exactly the same values, in slot order, as the vectorized
    draw_words/draw_ints path.  Handed to per-agent update functions as their
    round-local randomness.
    """

    def __init__(self, master_seed: int, purpose: int, round_index: int, agent: int):
        self._base = stream_base(master_seed, purpose, round_index)
        self._agent = agent
        self._cursor = 0

    def next_word(self) -> int:
        self._cursor += 1
        pos = (self._agent * _SLOT_STRIDE + self._cursor) & _MASK
        return _mix_int((self._base + _GOLDEN * pos) & _MASK)

    def randrange(self, bound: int) -> int:
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        return self.next_word() % bound

    def take(self, k: int, bound: int) -> list[int]:
        return [self.randrange(bound) for _ in range(k)]
