"""Majority consensus on one bit.

Each round an agent pulls two others and replaces its opinion with the
majority of its own bit and the two pulled bits.  With high probability the
population is unanimous after O(log n) rounds, and the dynamics tolerate a
sublinear number of Byzantine displays.
"""
from __future__ import annotations

import numpy as np

from . import rng as crng
from .bits import BitString
from .engine import BatchState, InitSpace, ProtocolSpec, UpdateContext


def maj3(a: int, b: int, c: int) -> int:
    """Majority of three bits."""
    for x in (a, b, c):
        if x not in (0, 1):
            raise ValueError(f"maj3 arguments must be bits, got {x}")
    return (a & b) | (a & c) | (b & c)


def maj3_array(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return (a & b) | (a & c) | (b & c)


def maj_consensus_update(own: int, pulled: tuple[int, int]) -> int:
    """New opinion given the agent's bit and two pulled bits."""
    return maj3(own, pulled[0], pulled[1])


class _OpinionSpace(InitSpace):
    value_count = 2

    def from_values(self, values: np.ndarray) -> dict[str, np.ndarray]:
        return {"opinion": values.astype(np.int64)}

    def random_cols(self, n: int, master_seed: int) -> dict[str, np.ndarray]:
        opinion = crng.draw_ints(master_seed, crng.PURPOSE_INIT, 0,
                                 np.arange(n), 1, 2)[:, 0]
        return {"opinion": opinion}

    def initial_output(self, cols, n, master_seed, adversarial):
        # the opinion is the output
        return cols["opinion"].copy()


def _kernel(state: BatchState, observed: np.ndarray, ctx: UpdateContext) -> None:
    op = maj3_array(state.cols["opinion"], observed[:, 0], observed[:, 1])
    state.cols["opinion"] = op
    state.output = op.copy()
    _refresh(state)


def _refresh(state: BatchState) -> None:
    state.visible = state.cols["opinion"].copy()


def maj_consensus_spec() -> ProtocolSpec:
    """PULL(2, 1) majority consensus."""
    return ProtocolSpec(
        name="maj-consensus",
        eta=2,
        ell=1,
        init_space=_OpinionSpace(),
        kernel=_kernel,
        refresh_visible=_refresh,
        bitwise_independent=True,
        decode=lambda s: s.cols["opinion"],
        output_modulus=None,
    )


def update_agent(state, observed: tuple[BitString, BitString]):
    """Per-agent helper mirroring the kernel; kept for readability in tests."""
    spec = maj_consensus_spec()
    return spec.update(state, list(observed))
