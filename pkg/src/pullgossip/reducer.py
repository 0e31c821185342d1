"""Compiler that shrinks message width by serializing messages over rounds.

A protocol that pulls eta messages of ell bits each round, and whose pulled
bits are independent across positions, can be emulated by a protocol pulling
2 messages of ceil(log2(eta/2 * ell)) + 1 bits.  Agents keep a shared phase
clock (synchronized with syn-simple's majority rule) and display one bit of
their frozen inner message per round next to the phase; receivers file the
two bits they pull into an inbox according to the sender's slot in the phase,
and run one inner update per completed phase.

Bitwise independence is what makes filing two bits per round sound: the
emulated inner update sees each bit position drawn from a fresh uniform
agent, which is exactly the inner protocol's sampling model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as crng
from .consensus import maj3_array
from .engine import (BatchState, ContractError, InitSpace, Population,
                     ProtocolSpec, SamplingMode, UpdateContext, step_round)


@dataclass(frozen=True)
class PhaseStructure:
    """Round/bit bookkeeping for one emulation phase.

    Each phase has one useful round per inner bit per message pair
    (phase_len of them), then idle rounds up to the next power of two so the
    phase clock can use bitwise majority.  Idle-round displays are junk that
    no receiver files.
    """

    eta: int
    ell: int
    phase_len: int
    subphase_count: int
    subphase_len: int
    phase_modulus: int
    phase_bits: int

    @property
    def message_bits(self) -> int:
        return self.phase_bits + 1


def phase_structure(eta: int, ell: int) -> PhaseStructure:
    if eta < 2 or eta % 2:
        raise ContractError(f"emulation phases need an even eta >= 2, got {eta}")
    if not 1 <= ell <= 32:
        raise ContractError(f"inner message width out of range: {ell}")
    payload = (eta // 2) * ell
    bits = max(0, math.ceil(math.log2(payload)))
    return PhaseStructure(eta, ell, payload, eta // 2, ell, 1 << bits, bits)


def _inner_cols(state: BatchState) -> dict[str, np.ndarray]:
    return {k[3:]: v for k, v in state.cols.items() if k.startswith("in_")}


def _inner_view(state: BatchState) -> BatchState:
    """Read-only inner state; columns are shared, visible is the frozen copy."""
    return BatchState(cols=_inner_cols(state), visible=state.cols["pm"],
                      output=state.output, is_source=state.is_source,
                      input_bit=state.input_bit)


class _EmulationSpace(InitSpace):
    def __init__(self, inner: ProtocolSpec, ps: PhaseStructure):
        self.inner = inner
        self.ps = ps
        self.value_count = inner.init_space.value_count

    def _wrap(self, inner_cols: dict[str, np.ndarray], n: int,
              phase: np.ndarray, master_seed: int,
              random_extras: bool) -> dict[str, np.ndarray]:
        cols = {"in_" + k: v for k, v in inner_cols.items()}
        state = BatchState(cols=dict(inner_cols),
                           visible=np.zeros(n, dtype=np.int64),
                           output=np.zeros(n, dtype=np.int64),
                           is_source=np.zeros(n, dtype=bool),
                           input_bit=np.zeros(n, dtype=np.int64))
        self.inner.refresh_visible(state)
        cols["phase"] = phase
        cols["pm"] = state.visible
        agents = np.arange(n)
        for m in range(self.ps.eta):
            if random_extras:
                cols[f"ib{m}"] = crng.draw_ints(
                    master_seed, crng.PURPOSE_INIT, 700 + 2 * m, agents, 1,
                    1 << self.ps.ell)[:, 0]
                cols[f"if{m}"] = crng.draw_ints(
                    master_seed, crng.PURPOSE_INIT, 701 + 2 * m, agents, 1,
                    1 << self.ps.ell)[:, 0]
            else:
                cols[f"ib{m}"] = np.zeros(n, dtype=np.int64)
                cols[f"if{m}"] = np.zeros(n, dtype=np.int64)
        return cols

    def from_values(self, values: np.ndarray) -> dict[str, np.ndarray]:
        n = len(values)
        return self._wrap(self.inner.init_space.from_values(values), n,
                          np.zeros(n, dtype=np.int64), 0, random_extras=False)

    def random_cols(self, n: int, master_seed: int) -> dict[str, np.ndarray]:
        phase = crng.draw_ints(master_seed, crng.PURPOSE_INIT, 799,
                               np.arange(n), 1, self.ps.phase_modulus)[:, 0]
        return self._wrap(self.inner.init_space.random_cols(n, master_seed),
                          n, phase, master_seed, random_extras=True)

    def initial_output(self, cols: dict[str, np.ndarray], n: int,
                       master_seed: int, adversarial: bool) -> np.ndarray:
        inner_cols = {k[3:]: v for k, v in cols.items() if k.startswith("in_")}
        return self.inner.init_space.initial_output(inner_cols, n, master_seed,
                                                    adversarial)


def emulate(inner: ProtocolSpec) -> ProtocolSpec:
    """Compile a bitwise-independent protocol down to 2 short pulls per round."""
    if not inner.bitwise_independent:
        raise ContractError(
            f"{inner.name} does not declare bitwise independence; "
            "the emulation's bit-filing argument needs it")
    eta_eff = inner.eta + (inner.eta & 1)  # odd: pull one spare, discard it
    ps = phase_structure(eta_eff, inner.ell)
    pmask = ps.phase_modulus - 1
    w = ps.phase_bits
    ell_in = ps.ell

    def refresh(state: BatchState) -> None:
        phase = state.cols["phase"]
        pbit = (state.cols["pm"] >> (phase % ell_in)) & 1
        state.visible = phase | (pbit << w)

    def kernel(state: BatchState, observed: np.ndarray, ctx: UpdateContext) -> None:
        cols = state.cols
        z = cols["phase"]
        pulled_bit = ((observed[:, 0] >> w) & 1, (observed[:, 1] >> w) & 1)

        # file this round's two bits into the inbox slot the phase points at
        useful = z < ps.phase_len
        i = z % ell_in
        pair = z // ell_in
        for j in range(ps.subphase_count):
            rows = useful & (pair == j)
            if not rows.any():
                continue
            for d, m in ((0, 2 * j), (1, 2 * j + 1)):
                cols[f"ib{m}"] = np.where(
                    rows, cols[f"ib{m}"] | (pulled_bit[d] << i), cols[f"ib{m}"])
                cols[f"if{m}"] = np.where(
                    rows, cols[f"if{m}"] | (np.int64(1) << i), cols[f"if{m}"])

        if w > 0:
            z = (maj3_array(z, observed[:, 0] & pmask, observed[:, 1] & pmask)
                 + 1) & pmask
        cols["phase"] = z
        wrapped = z == 0

        if wrapped.any():
            rows = np.nonzero(wrapped)[0]
            pm = cols["pm"][rows]
            obs = np.empty((len(rows), inner.eta), dtype=np.int64)
            for m in range(inner.eta):
                filled = cols[f"if{m}"][rows]
                obs[:, m] = (cols[f"ib{m}"][rows] & filled) | (pm & ~filled)
            sub = BatchState(cols={k: v[rows] for k, v in _inner_cols(state).items()},
                             visible=pm.copy(),
                             output=state.output[rows],
                             is_source=state.is_source[rows],
                             input_bit=state.input_bit[rows])
            inner.kernel(sub, obs, UpdateContext(round_index=ctx.round_index,
                                                 master_seed=ctx.master_seed,
                                                 n=len(rows)))
            for k, v in sub.cols.items():
                cols["in_" + k][rows] = v
            cols["pm"][rows] = sub.visible
            state.output[rows] = sub.output
            for m in range(ps.eta):
                cols[f"ib{m}"][rows] = 0
                cols[f"if{m}"][rows] = 0

        refresh(state)

    decode = None
    if inner.decode is not None:
        decode = lambda state: inner.decode(_inner_view(state))
    speakers = None
    if inner.speakers is not None:
        speakers = lambda state: inner.speakers(_inner_view(state))

    return ProtocolSpec(
        name=f"reduced-{inner.name}",
        eta=2,
        ell=ps.message_bits,
        init_space=_EmulationSpace(inner, ps),
        kernel=kernel,
        refresh_visible=refresh,
        bitwise_independent=True,
        decode=decode,
        output_modulus=inner.output_modulus,
        speakers=speakers,
    )


def run_bit_model(pop: Population, spec: ProtocolSpec, master_seed: int,
                  rounds: int, targets_override=None) -> list[Population]:
    """Drive a protocol with per-bit sampling; returns the state after each round."""
    out = []
    for r in range(rounds):
        override = None if targets_override is None else targets_override(r)
        pop = step_round(pop, spec, master_seed, round_index=r,
                         mode=SamplingMode.BIT, targets_override=override)
        out.append(pop)
    return out
