"""Bit dissemination: spreading a few source agents' majority bit to everyone.

Contains the two classic clocked baselines (a 2-bit certainty protocol and a
1-bit subphase-sensitive protocol), the clocked phase-spread protocol whose
display squeezes "who speaks what" into one bit via round parity, and the
fully self-stabilizing composition that replaces the assumed shared clock
with syn-clock and compiles the result down to 3-bit messages.

The baselines assume an already-synchronized clock; it is kept in a private
column that every initialization starts at zero, standing in for the oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as crng
from .clocks import syn_clock_4bit_spec, syn_clock_layout
from .engine import (BatchState, ContractError, InitSpace, ProtocolSpec,
                     UpdateContext)
from .reducer import emulate


def oracle_period(n: int, gamma: float = 10.0) -> int:
    """Clock modulus for the baselines: about gamma * log2(n) rounds."""
    if n < 2:
        raise ContractError(f"population bound must be >= 2, got {n}")
    if gamma <= 0:
        raise ContractError(f"gamma must be positive, got {gamma}")
    return math.ceil(gamma * math.log2(n))


# ---------------------------------------------------------------------------
# 2-bit certainty baseline


def certainty_round(output: int, certainty: int, pulled: list[tuple[int, int]],
                    clock: int, is_source: bool = False,
                    input_bit: int = 0) -> tuple[int, int]:
    """One agent's step of the certainty protocol; returns (output, certainty).

    Sources are pinned.  Non-sources copy the first pulled pair that carries
    certainty; at clock 0 they drop certainty and ignore this round's pulls,
    which restarts the epidemic from the sources.
    """
    if is_source:
        return input_bit, 1
    if clock == 0:
        return output, 0
    for out_bit, cert_bit in pulled:
        if cert_bit == 1:
            return out_bit, 1
    return output, certainty


class _CertaintySpace(InitSpace):
    value_count = 2

    def from_values(self, values: np.ndarray) -> dict[str, np.ndarray]:
        n = len(values)
        return {"opin": values.astype(np.int64),
                "cert": np.zeros(n, dtype=np.int64),
                "clk": np.zeros(n, dtype=np.int64)}

    def random_cols(self, n: int, master_seed: int) -> dict[str, np.ndarray]:
        agents = np.arange(n)
        opin = crng.draw_ints(master_seed, crng.PURPOSE_INIT, 400, agents, 1, 2)[:, 0]
        cert = crng.draw_ints(master_seed, crng.PURPOSE_INIT, 401, agents, 1, 2)[:, 0]
        # the clock is the oracle's, not the adversary's
        return {"opin": opin, "cert": cert, "clk": np.zeros(n, dtype=np.int64)}

    def initial_output(self, cols, n, master_seed, adversarial):
        return cols["opin"].copy()


def certainty_spec(n: int, gamma: float = 10.0) -> ProtocolSpec:
    """Baseline: output bit plus a certainty bit, reset every clock period."""
    period = oracle_period(n, gamma)

    def refresh(state: BatchState) -> None:
        state.visible = state.cols["opin"] | (state.cols["cert"] << 1)

    def kernel(state: BatchState, observed: np.ndarray, ctx: UpdateContext) -> None:
        cols = state.cols
        opin, cert = cols["opin"], cols["cert"]
        po = (observed[:, 0] & 1, observed[:, 1] & 1)
        pc = ((observed[:, 0] >> 1) & 1, (observed[:, 1] >> 1) & 1)
        take0 = pc[0] == 1
        take1 = ~take0 & (pc[1] == 1)
        new_opin = np.where(take0, po[0], np.where(take1, po[1], opin))
        new_cert = cert | take0 | take1
        # reset wins over this round's observations
        at_reset = cols["clk"] == 0
        new_opin = np.where(at_reset, opin, new_opin)
        new_cert = np.where(at_reset, 0, new_cert)
        src = state.is_source
        cols["opin"] = np.where(src, state.input_bit, new_opin)
        cols["cert"] = np.where(src, 1, new_cert)
        cols["clk"] = (cols["clk"] + 1) % period
        state.output = cols["opin"].copy()
        refresh(state)

    return ProtocolSpec(
        name="certainty", eta=2, ell=2, init_space=_CertaintySpace(),
        kernel=kernel, refresh_visible=refresh, bitwise_independent=False,
        speakers=lambda s: s.cols["cert"] == 1)


# ---------------------------------------------------------------------------
# 1-bit subphase baseline


def subphase_round(output: int, pulled: list[int], clock: int, period: int,
                   is_source: bool = False, input_bit: int = 0) -> int:
    """One agent's step of the subphase protocol; returns the new output.

    First half of the period: any pulled 0 pulls the agent to 0; second half:
    any pulled 1 pulls it to 1.  A lone source at 1 survives the first half
    untouched and then floods the second.
    """
    if is_source:
        return input_bit
    if clock < period // 2:
        return 0 if 0 in pulled else output
    return 1 if 1 in pulled else output


def subphase_period(n: int, gamma: float = 10.0) -> int:
    t = oracle_period(n, gamma)
    return t + (t % 2)


class _SubphaseSpace(InitSpace):
    value_count = 2

    def from_values(self, values: np.ndarray) -> dict[str, np.ndarray]:
        return {"opin": values.astype(np.int64),
                "clk": np.zeros(len(values), dtype=np.int64)}

    def random_cols(self, n: int, master_seed: int) -> dict[str, np.ndarray]:
        opin = crng.draw_ints(master_seed, crng.PURPOSE_INIT, 402,
                              np.arange(n), 1, 2)[:, 0]
        return {"opin": opin, "clk": np.zeros(n, dtype=np.int64)}

    def initial_output(self, cols, n, master_seed, adversarial):
        return cols["opin"].copy()


def subphase_spec(n: int, gamma: float = 10.0) -> ProtocolSpec:
    """Baseline: plain output bit, 0-sensitive then 1-sensitive half-periods."""
    period = subphase_period(n, gamma)

    def refresh(state: BatchState) -> None:
        state.visible = state.cols["opin"].copy()

    def kernel(state: BatchState, observed: np.ndarray, ctx: UpdateContext) -> None:
        cols = state.cols
        opin = cols["opin"]
        first_half = cols["clk"] < period // 2
        new = np.where(first_half,
                       opin & observed[:, 0] & observed[:, 1],
                       opin | observed[:, 0] | observed[:, 1])
        cols["opin"] = np.where(state.is_source, state.input_bit, new)
        cols["clk"] = (cols["clk"] + 1) % period
        state.output = cols["opin"].copy()
        refresh(state)

    return ProtocolSpec(
        name="subphase", eta=2, ell=1, init_space=_SubphaseSpace(),
        kernel=kernel, refresh_visible=refresh, bitwise_independent=True)


# ---------------------------------------------------------------------------
# phase schedule


@dataclass(frozen=True)
class PhaseKind:
    """boosting | spreading (with 1-based index) | polling."""

    name: str
    index: int = 0


@dataclass(frozen=True, eq=False)
class PhaseSchedule:
    """Round layout of one phase-spread period.

    Boosting and spreading rounds come in parity pairs (even then odd), so
    both speak-a-0 and speak-a-1 displays get a slot; their lengths are
    doubled accordingly.  Polling is not doubled: either parity class alone
    counts certifying displays without bias.
    """

    n: int
    boosting_len: int
    spreading_phases: int
    spreading_len: int
    polling_len: int
    kind_code: np.ndarray = field(repr=False)   # round -> 0 boost, 1 spread, 2 poll
    phase_id: np.ndarray = field(repr=False)    # round -> distinct id per phase

    @property
    def period(self) -> int:
        return len(self.kind_code)

    def phase_of(self, clock: int) -> PhaseKind:
        if not 0 <= clock < self.period:
            raise ContractError(f"clock {clock} outside [0, {self.period})")
        code = int(self.kind_code[clock])
        if code == 0:
            return PhaseKind("boosting")
        if code == 2:
            return PhaseKind("polling")
        return PhaseKind("spreading", int(self.phase_id[clock]))


def phase_schedule(n: int, gamma_phase: float = 20.0) -> PhaseSchedule:
    if n < 2:
        raise ContractError(f"population bound must be >= 2, got {n}")
    if gamma_phase < 1:
        raise ContractError(f"gamma_phase must be >= 1, got {gamma_phase}")
    log_n = math.log2(n)
    boosting = 2 * math.ceil(gamma_phase * log_n)
    phases = math.ceil(2 * log_n)
    spread_len = 2 * math.ceil(gamma_phase)
    polling = math.ceil(gamma_phase * log_n)
    period = boosting + phases * spread_len + polling
    kind = np.empty(period, dtype=np.int64)
    pid = np.empty(period, dtype=np.int64)
    kind[:boosting] = 0
    pid[:boosting] = 0
    for i in range(phases):
        lo = boosting + i * spread_len
        kind[lo:lo + spread_len] = 1
        pid[lo:lo + spread_len] = i + 1
    kind[boosting + phases * spread_len:] = 2
    pid[boosting + phases * spread_len:] = phases + 1
    return PhaseSchedule(n, boosting, phases, spread_len, polling, kind, pid)


# ---------------------------------------------------------------------------
# parity display and certification


def parity_display(speaking: bool, b1: int, parity: int) -> int:
    """The 1-bit display: odd rounds belong to 0-speakers, even to 1-speakers.

    On parity 1 only a speaker pushing 0 displays 0; everyone else blends in
    with 1.  On parity 0 only a speaker pushing 1 displays 1.
    """
    if parity == 1:
        return 0 if speaking and b1 == 0 else 1
    return 1 if speaking and b1 == 1 else 0


def certified_value(seen: int, parity: int) -> int | None:
    """Inverse of parity_display: the spoken bit this observation proves, if any."""
    if parity == 1 and seen == 0:
        return 0
    if parity == 0 and seen == 1:
        return 1
    return None


def _parity_display_vec(speaking: np.ndarray, b1: np.ndarray,
                        parity: np.ndarray) -> np.ndarray:
    odd = parity == 1
    show0 = speaking & (b1 == 0)
    show1 = speaking & (b1 == 1)
    return np.where(odd, np.where(show0, 0, 1), np.where(show1, 1, 0))


# ---------------------------------------------------------------------------
# phase-spread


def phase_spread_round(state: dict, pulled_bit: int, clock: int,
                       schedule: PhaseSchedule, is_source: bool = False,
                       input_bit: int = 0) -> dict:
    """One agent's phase-spread step on a scalar state dict.

    Keys: speaking, b1, pending, p0, p1, output.  `clock` is the shared
    clock before this round's tick.  The returned dict reflects the state
    after the tick (including any phase-boundary activation or end-of-period
    decision).
    """
    s = dict(state)
    kind = schedule.phase_of(clock)
    cert = certified_value(pulled_bit, clock % 2)

    if kind.name == "polling":
        if cert == 0:
            s["p0"] += 1
        elif cert == 1:
            s["p1"] += 1
    else:
        s["p0"] = 0
        s["p1"] = 0
        if (not s["speaking"] and not is_source and cert is not None
                and not s["pending"]):
            s["b1"] = cert
            s["pending"] = True

    nxt = (clock + 1) % schedule.period
    if nxt == 0:
        s["output"] = 1 if s["p1"] > s["p0"] else 0
        s["p0"] = 0
        s["p1"] = 0
        s["speaking"] = False
        s["pending"] = False
    elif schedule.phase_id[nxt] != schedule.phase_id[clock]:
        if s["pending"]:
            s["speaking"] = True
        s["pending"] = False

    if is_source:
        s["speaking"] = True
        s["b1"] = input_bit
    return s


def _ps_cols(n: int) -> dict[str, np.ndarray]:
    z = lambda: np.zeros(n, dtype=np.int64)
    return {"speaking": z(), "b1": z(), "pending": z(), "p0": z(), "p1": z()}


def _ps_random_cols(n: int, master_seed: int, period: int) -> dict[str, np.ndarray]:
    agents = np.arange(n)
    d = lambda tag, bound: crng.draw_ints(master_seed, crng.PURPOSE_INIT, tag,
                                          agents, 1, bound)[:, 0]
    return {"speaking": d(403, 2), "b1": d(404, 2), "pending": d(405, 2),
            "p0": d(406, period), "p1": d(407, period)}


def _ps_step(state: BatchState, pulled_bit: np.ndarray, c_pre: np.ndarray,
             c_post: np.ndarray, sched: PhaseSchedule) -> None:
    """Vectorized phase-spread transition between two clock readings.

    With the composed clock the reading can dwell on one value for several
    rounds; certification then simply gets several chances per clock value,
    and boundary/wrap actions fire on the reading's transitions.
    """
    cols = state.cols
    speaking = cols["speaking"] == 1
    pending = cols["pending"] == 1
    b1, p0, p1 = cols["b1"], cols["p0"], cols["p1"]

    parity = c_pre & 1
    cert0 = (parity == 1) & (pulled_bit == 0)
    cert1 = (parity == 0) & (pulled_bit == 1)
    in_poll = sched.kind_code[c_pre] == 2

    p0 = np.where(in_poll, p0 + (in_poll & cert0), 0)
    p1 = np.where(in_poll, p1 + (in_poll & cert1), 0)

    newly = (~in_poll & ~speaking & ~state.is_source & ~pending
             & (cert0 | cert1))
    b1 = np.where(newly, np.where(cert1, 1, 0), b1)
    pending = pending | newly

    wrap = (c_post == 0) & (c_pre != 0)  # a transition, not the dwell at 0
    boundary = sched.phase_id[c_post] != sched.phase_id[c_pre]
    speaking = speaking | (boundary & ~wrap & pending)
    pending = pending & ~boundary

    state.output = np.where(wrap, (p1 > p0).astype(np.int64), state.output)
    speaking = speaking & ~wrap
    pending = pending & ~wrap
    p0 = np.where(wrap, 0, p0)
    p1 = np.where(wrap, 0, p1)

    speaking = speaking | state.is_source
    b1 = np.where(state.is_source, state.input_bit, b1)

    cols["speaking"] = speaking.astype(np.int64)
    cols["pending"] = pending.astype(np.int64)
    cols["b1"] = b1
    cols["p0"] = p0
    cols["p1"] = p1


def speaker_counts(state: BatchState) -> tuple[int, int]:
    """(number speaking 1, number speaking 0), sources included."""
    speaking = (state.cols["speaking"] == 1) | state.is_source
    b1 = np.where(state.is_source, state.input_bit, state.cols["b1"])
    return int((speaking & (b1 == 1)).sum()), int((speaking & (b1 == 0)).sum())


class _PhaseSpreadSpace(InitSpace):
    value_count = 2

    def __init__(self, period: int):
        self.period = period

    def from_values(self, values: np.ndarray) -> dict[str, np.ndarray]:
        n = len(values)
        cols = _ps_cols(n)
        cols["b1"] = values.astype(np.int64)
        cols["clk"] = np.zeros(n, dtype=np.int64)
        return cols

    def random_cols(self, n: int, master_seed: int) -> dict[str, np.ndarray]:
        cols = _ps_random_cols(n, master_seed, self.period)
        cols["clk"] = np.zeros(n, dtype=np.int64)  # oracle-owned
        return cols

    def initial_output(self, cols, n, master_seed, adversarial):
        if adversarial:
            return crng.draw_ints(master_seed, crng.PURPOSE_INIT, 408,
                                  np.arange(n), 1, 2)[:, 0]
        return cols["b1"].copy()


def phase_spread_spec(n: int, gamma_phase: float = 20.0) -> ProtocolSpec:
    """Phase-spread with the shared clock supplied by an oracle.

    A single pulled bit per round; the second pull of the PULL(2) model is
    simply never requested (eta=1).
    """
    sched = phase_schedule(n, gamma_phase)

    def refresh(state: BatchState) -> None:
        speaking = (state.cols["speaking"] == 1) | state.is_source
        b1 = np.where(state.is_source, state.input_bit, state.cols["b1"])
        state.visible = _parity_display_vec(speaking, b1, state.cols["clk"] & 1)

    def kernel(state: BatchState, observed: np.ndarray, ctx: UpdateContext) -> None:
        c_pre = state.cols["clk"]
        c_post = (c_pre + 1) % sched.period
        _ps_step(state, observed[:, 0] & 1, c_pre, c_post, sched)
        state.cols["clk"] = c_post
        refresh(state)

    return ProtocolSpec(
        name="phase-spread", eta=1, ell=1,
        init_space=_PhaseSpreadSpace(sched.period),
        kernel=kernel, refresh_visible=refresh, bitwise_independent=True,
        speakers=lambda s: (s.cols["speaking"] == 1) | s.is_source)


# ---------------------------------------------------------------------------
# self-stabilizing composition


class _ComposedSpace(InitSpace):
    value_count = 2

    def __init__(self, clock_spec: ProtocolSpec, period: int):
        self.clock_space = clock_spec.init_space
        self.period = period

    def from_values(self, values: np.ndarray) -> dict[str, np.ndarray]:
        n = len(values)
        cols = self.clock_space.from_values(np.zeros(n, dtype=np.int64))
        cols.update(_ps_cols(n))
        cols["b1"] = values.astype(np.int64)
        return cols

    def random_cols(self, n: int, master_seed: int) -> dict[str, np.ndarray]:
        cols = self.clock_space.random_cols(n, master_seed)
        cols.update(_ps_random_cols(n, master_seed, self.period))
        return cols

    def initial_output(self, cols, n, master_seed, adversarial):
        if adversarial:
            return crng.draw_ints(master_seed, crng.PURPOSE_INIT, 408,
                                  np.arange(n), 1, 2)[:, 0]
        return cols["b1"].copy()


def syn_phase_spread_4bit_spec(n: int, gamma: float = 8.0,
                               gamma_phase: float = 20.0) -> ProtocolSpec:
    """Phase-spread driven by the 3-bit self-stabilizing clock; 4-bit messages.

    Bits 0-2 carry the compiled clock for the schedule period; bit 3 carries
    the phase-spread display.  The clock reading advances once per clock
    emulation phase, so the schedule simply dwells on each round value.
    """
    sched = phase_schedule(n, gamma_phase)
    clock = emulate(syn_clock_4bit_spec(sched.period, n, gamma))
    if clock.ell != 3:
        raise ContractError(f"compiled clock width {clock.ell} != 3")

    def ps_display(state: BatchState) -> np.ndarray:
        speaking = (state.cols["speaking"] == 1) | state.is_source
        b1 = np.where(state.is_source, state.input_bit, state.cols["b1"])
        parity = clock.decode(state) & 1
        return _parity_display_vec(speaking, b1, parity)

    def refresh(state: BatchState) -> None:
        clock.refresh_visible(state)
        state.visible = state.visible | (ps_display(state) << 3)

    def kernel(state: BatchState, observed: np.ndarray, ctx: UpdateContext) -> None:
        c_pre = clock.decode(state)
        clock.kernel(state, observed & 0b111, ctx)
        c_post = clock.decode(state)
        _ps_step(state, (observed[:, 0] >> 3) & 1, c_pre, c_post, sched)
        refresh(state)

    return ProtocolSpec(
        name="syn-phase-spread-4bit", eta=2, ell=4,
        init_space=_ComposedSpace(clock, sched.period),
        kernel=kernel, refresh_visible=refresh, bitwise_independent=True,
        decode=clock.decode, output_modulus=sched.period,
        speakers=lambda s: (s.cols["speaking"] == 1) | s.is_source)


def syn_phase_spread_spec(n: int, gamma: float = 8.0,
                          gamma_phase: float = 20.0) -> ProtocolSpec:
    """The end-to-end protocol: self-stabilizing majority-bit dissemination
    with 3-bit messages."""
    spec = emulate(syn_phase_spread_4bit_spec(n, gamma, gamma_phase))
    return ProtocolSpec(
        name="syn-phase-spread", eta=spec.eta, ell=spec.ell,
        init_space=spec.init_space, kernel=spec.kernel,
        refresh_visible=spec.refresh_visible,
        bitwise_independent=spec.bitwise_independent,
        decode=spec.decode, output_modulus=spec.output_modulus,
        speakers=spec.speakers)
