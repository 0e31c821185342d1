"""Synchronous PULL-model execution engine.

A population of n agents evolves in lockstep rounds.  Each round every agent
samples some other agents uniformly at random with replacement (itself
included), reads only their small visible parts, and applies the protocol's
update to its own full state.  All reads in a round see the same snapshot:
an update never observes another agent's same-round update.

State is column oriented: each protocol stores its per-agent memory as named
int64 numpy arrays, and its update is a vectorized kernel over those columns.
The per-agent view of the same contract (AgentState in, AgentState out) is
derived from the kernel by running it on a one-row batch, so both paths are
the same code.

Byzantine agents are modeled at the display layer: before sampling, the
adversary replaces their visible parts with bits of its choosing, and their
own state is never updated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from . import rng as crng
from .bits import BitString, ContractError

AgentId = int


class SamplingMode(Enum):
    PULL = "pull"
    BIT = "bit"


# ---------------------------------------------------------------------------
# state containers


@dataclass(frozen=True, slots=True)
class AgentState:
    """One agent's full state between rounds.

    visible is the only part other agents can read.  private_memory maps the
    protocol's column names to int values and is opaque to the engine.
    """

    visible: BitString
    private_memory: Mapping[str, int]
    is_source: bool = False
    input_bit: int = 0
    output_bit: int = 0


@dataclass
class BatchState:
    """Column-per-field population state; row i belongs to agent i."""

    cols: dict[str, np.ndarray]
    visible: np.ndarray
    output: np.ndarray
    is_source: np.ndarray
    input_bit: np.ndarray

    @property
    def n(self) -> int:
        return len(self.visible)

    def copy(self) -> "BatchState":
        return BatchState(
            cols={k: v.copy() for k, v in self.cols.items()},
            visible=self.visible.copy(),
            output=self.output.copy(),
            is_source=self.is_source.copy(),
            input_bit=self.input_bit.copy(),
        )

    def row(self, i: int, ell: int) -> AgentState:
        return AgentState(
            visible=BitString(ell, int(self.visible[i])),
            private_memory={k: int(v[i]) for k, v in self.cols.items()},
            is_source=bool(self.is_source[i]),
            input_bit=int(self.input_bit[i]),
            output_bit=int(self.output[i]),
        )


def batch_from_state(state: AgentState) -> BatchState:
    return BatchState(
        cols={k: np.array([v], dtype=np.int64) for k, v in state.private_memory.items()},
        visible=np.array([state.visible.value], dtype=np.int64),
        output=np.array([state.output_bit], dtype=np.int64),
        is_source=np.array([state.is_source]),
        input_bit=np.array([state.input_bit], dtype=np.int64),
    )


@dataclass(frozen=True, slots=True)
class UpdateContext:
    """Round-local inputs a kernel may use besides the observed messages."""

    round_index: int
    master_seed: int
    n: int


class InitSpace:
    """Legal private-state domain of a protocol, for adversarial initialization.

    value_count is the size of the protocol's headline value domain (opinion
    bits: 2, clocks: the modulus).  from_values embeds such a value into a
    canonical full state; random_cols draws the full private state uniformly,
    buffers and scratch fields included.
    """

    value_count: int = 2

    def from_values(self, values: np.ndarray) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def random_cols(self, n: int, master_seed: int) -> dict[str, np.ndarray]:
        raise NotImplementedError

    # initial output bits; adversarial strategies may scramble these too
    def initial_output(self, cols: dict[str, np.ndarray], n: int,
                       master_seed: int, adversarial: bool) -> np.ndarray:
        if adversarial:
            return crng.draw_ints(master_seed, crng.PURPOSE_INIT, _INIT_OUTPUT_FIELD,
                                  np.arange(n), 1, 2)[:, 0]
        return np.zeros(n, dtype=np.int64)


_INIT_OUTPUT_FIELD = 10_000  # init-stream round tag for output bits


@dataclass(frozen=True)
class ProtocolSpec:
    """A protocol in the PULL(eta, ell) model.

    kernel mutates a BatchState in place given the (n, eta) int matrix of
    observed visible parts; it must be deterministic and must only depend on
    the rows it updates.  refresh_visible recomputes the visible column from
    the private columns and is the single place display encoding lives.
    """

    name: str
    eta: int
    ell: int
    init_space: InitSpace
    kernel: Callable[[BatchState, np.ndarray, UpdateContext], None]
    refresh_visible: Callable[[BatchState], None]
    bitwise_independent: bool = False
    decode: Callable[[BatchState], np.ndarray] | None = None
    output_modulus: int | None = None
    speakers: Callable[[BatchState], np.ndarray] | None = None

    def update(self, state: AgentState, observed: Sequence[BitString],
               rng: crng.AgentStream | None = None,
               round_index: int = 0, n: int = 1,
               master_seed: int = 0) -> AgentState:
        """Per-agent form of the kernel: pure AgentState -> AgentState."""
        if len(observed) != self.eta:
            raise ContractError(f"{self.name} expects {self.eta} observed messages, "
                                f"got {len(observed)}")
        for m in observed:
            if m.width != self.ell:
                raise ContractError(f"observed message width {m.width} != ell {self.ell}")
        batch = batch_from_state(state)
        obs = np.array([[m.value for m in observed]], dtype=np.int64)
        self.kernel(batch, obs, UpdateContext(round_index, master_seed, n))
        return batch.row(0, self.ell)

    def decoded(self, state: BatchState) -> np.ndarray:
        return self.decode(state) if self.decode is not None else state.output


@dataclass
class Population:
    """Agents plus the set an adversary controls."""

    state: BatchState
    byzantine_mask: np.ndarray
    ell: int

    @property
    def n(self) -> int:
        return self.state.n

    @property
    def byzantine(self) -> frozenset[AgentId]:
        return frozenset(int(i) for i in np.flatnonzero(self.byzantine_mask))

    @property
    def honest_mask(self) -> np.ndarray:
        return ~self.byzantine_mask

    def agent(self, i: AgentId) -> AgentState:
        return self.state.row(i, self.ell)

    def copy(self) -> "Population":
        return Population(self.state.copy(), self.byzantine_mask.copy(), self.ell)


def byzantine_cap(n: int) -> int:
    """Default adversary budget; grows clearly sublinearly in n."""
    return int(math.floor(n ** 0.4))


@dataclass(frozen=True)
class ByzantineDisplay:
    """How corrupted agents' visible parts are filled each round.

    fixed: constant bit pattern `value`.
    random: fresh uniform bits every round.
    worst_opinion: bitwise complement of the most common honest display.
    """

    kind: str = "fixed"
    value: int = 0

    def apply(self, snapshot: np.ndarray, byz_mask: np.ndarray, ell: int,
              master_seed: int, round_index: int) -> None:
        ids = np.flatnonzero(byz_mask)
        if len(ids) == 0:
            return
        mask = (1 << ell) - 1
        if self.kind == "fixed":
            snapshot[ids] = self.value & mask
        elif self.kind == "random":
            words = crng.draw_words(master_seed, crng.PURPOSE_BYZANTINE,
                                    round_index, ids, 1)[:, 0]
            snapshot[ids] = (words & np.uint64(mask)).astype(np.int64)
        elif self.kind == "worst_opinion":
            honest = snapshot[~byz_mask]
            modal = int(np.bincount(honest, minlength=1).argmax())
            snapshot[ids] = (~modal) & mask
        else:
            raise ContractError(f"unknown byzantine display kind {self.kind!r}")


# ---------------------------------------------------------------------------
# sampling


def sample_targets(stream: crng.AgentStream, n: int, eta: int) -> list[AgentId]:
    """The eta uniform-with-replacement pull targets for one agent.

    Consumes eta slots of the agent's round stream; the vectorized engine
    path computes identical values.
    """
    if n <= 0:
        raise ContractError(f"population size must be positive, got {n}")
    if eta <= 0:
        raise ContractError(f"eta must be positive, got {eta}")
    return stream.take(eta, n)


def _observed_messages(snapshot: np.ndarray, spec: ProtocolSpec, n: int,
                       master_seed: int, round_index: int,
                       mode: SamplingMode,
                       targets_override: np.ndarray | None = None) -> np.ndarray:
    agents = np.arange(n)
    if mode is SamplingMode.PULL:
        if targets_override is not None:
            targets = targets_override
        else:
            targets = crng.draw_ints(master_seed, crng.PURPOSE_TARGETS,
                                     round_index, agents, spec.eta, n)
        return snapshot[targets]
    # BIT model: bit i of observed message m comes from its own sampled agent,
    # slot layout m*ell + i so that ell=1 coincides exactly with PULL
    if not spec.bitwise_independent:
        raise ContractError(
            f"{spec.name} is not flagged bitwise independent; BIT sampling undefined")
    ell = spec.ell
    if targets_override is not None:
        targets = targets_override
    else:
        targets = crng.draw_ints(master_seed, crng.PURPOSE_TARGETS,
                                 round_index, agents, spec.eta * ell, n)
    observed = np.zeros((n, spec.eta), dtype=np.int64)
    for m in range(spec.eta):
        for i in range(ell):
            bit = (snapshot[targets[:, m * ell + i]] >> i) & 1
            observed[:, m] |= bit << i
    return observed


# ---------------------------------------------------------------------------
# round execution


def step_round(pop: Population, spec: ProtocolSpec, master_seed: int,
               round_index: int = 0, mode: SamplingMode = SamplingMode.PULL,
               byzantine_display: ByzantineDisplay | None = None,
               targets_override: np.ndarray | None = None) -> Population:
    """One synchronous round; returns the next population.

    The input population is not modified.  Every observation reads the
    round-start snapshot, so the result is independent of any agent ordering.
    Byzantine agents' displays are overwritten before sampling and their own
    state is carried over unchanged.
    """
    n = pop.n
    if n <= 0:
        raise ContractError(f"population size must be positive, got {n}")
    snapshot = pop.state.visible.copy()
    if byzantine_display is not None:
        byzantine_display.apply(snapshot, pop.byzantine_mask, spec.ell,
                                master_seed, round_index)
    observed = _observed_messages(snapshot, spec, n, master_seed, round_index,
                                  mode, targets_override)

    new_state = pop.state.copy()
    spec.kernel(new_state, observed, UpdateContext(round_index, master_seed, n))
    if np.any(new_state.visible >> spec.ell):
        raise ContractError(f"{spec.name} wrote a visible part wider than {spec.ell} bits")

    byz = pop.byzantine_mask
    if byz.any():
        old = pop.state
        for k, arr in new_state.cols.items():
            arr[byz] = old.cols[k][byz]
        new_state.visible[byz] = old.visible[byz]
        new_state.output[byz] = old.output[byz]
    return Population(new_state, pop.byzantine_mask, spec.ell)


# ---------------------------------------------------------------------------
# initialization


@dataclass(frozen=True)
class InitStrategy:
    """Adversarial initialization: name plus optional parameters.

    uniform_random        every private field uniform over its legal range
    all_equal             every agent at headline value `value`
    half_split            half the agents at 0, half at value_count // 2
    max_spread_clocks     agent i at value i mod value_count
    custom                explicit per-agent headline values in `bits`
    """

    name: str = "uniform_random"
    value: int = 0
    bits: tuple[int, ...] | None = None


def adversarial_init(spec: ProtocolSpec, n: int, strategy: InitStrategy,
                     master_seed: int,
                     sources: tuple[int, int] | None = None,
                     byzantine_count: int = 0,
                     allow_byzantine_overflow: bool = False) -> Population:
    """Build a population whose state the adversary chose.

    sources=(k1, k0) marks k1 agents as sources with input bit 1 and k0 with
    input bit 0, selected by seeded shuffle.  Byzantine agents are drawn from
    the non-source remainder and capped at floor(n**0.4) unless overridden.
    """
    if n <= 0:
        raise ContractError(f"population size must be positive, got {n}")
    space = spec.init_space

    if strategy.name == "uniform_random":
        cols = space.random_cols(n, master_seed)
        output = space.initial_output(cols, n, master_seed, adversarial=True)
    else:
        if strategy.name == "all_equal":
            if not 0 <= strategy.value < space.value_count:
                raise ContractError(
                    f"all_equal value {strategy.value} outside [0, {space.value_count})")
            values = np.full(n, strategy.value, dtype=np.int64)
        elif strategy.name == "half_split":
            values = np.zeros(n, dtype=np.int64)
            values[n // 2:] = space.value_count // 2 if space.value_count > 2 else 1
        elif strategy.name == "max_spread_clocks":
            values = np.arange(n, dtype=np.int64) % space.value_count
        elif strategy.name == "custom":
            if strategy.bits is None or len(strategy.bits) != n:
                raise ContractError("custom strategy needs one value per agent")
            values = np.asarray(strategy.bits, dtype=np.int64)
            if values.min() < 0 or values.max() >= space.value_count:
                raise ContractError(
                    f"custom values outside [0, {space.value_count})")
        else:
            raise ContractError(f"unknown init strategy {strategy.name!r}")
        cols = space.from_values(values)
        output = space.initial_output(cols, n, master_seed, adversarial=False)

    is_source = np.zeros(n, dtype=bool)
    input_bit = np.zeros(n, dtype=np.int64)
    byz_mask = np.zeros(n, dtype=bool)

    k1, k0 = sources if sources is not None else (0, 0)
    if k1 < 0 or k0 < 0 or k1 + k0 > n:
        raise ContractError(f"source counts ({k1}, {k0}) do not fit in n={n}")
    if byzantine_count < 0 or k1 + k0 + byzantine_count > n:
        raise ContractError("sources plus byzantine agents exceed the population")
    cap = byzantine_cap(n)
    if byzantine_count > cap and not allow_byzantine_overflow:
        raise ContractError(
            f"byzantine count {byzantine_count} exceeds cap {cap} for n={n}")

    if k1 + k0 + byzantine_count > 0:
        order = np.argsort(
            crng.draw_words(master_seed, crng.PURPOSE_ROLES, 0, np.arange(n), 1)[:, 0],
            kind="stable")
        src = order[:k1 + k0]
        is_source[src] = True
        input_bit[src[:k1]] = 1
        if byzantine_count:
            byz_mask[order[n - byzantine_count:]] = True

    state = BatchState(cols=cols, visible=np.zeros(n, dtype=np.int64),
                       output=output, is_source=is_source, input_bit=input_bit)
    spec.refresh_visible(state)
    if np.any(state.visible >> spec.ell):
        raise ContractError(f"{spec.name} init wrote a visible part wider than ell")
    return Population(state, byz_mask, spec.ell)


# ---------------------------------------------------------------------------
# runs


def population_metrics(pop: Population, spec: ProtocolSpec) -> tuple[float, int, float]:
    """(agreement fraction, speaker count, decoded-value entropy in bits).

    Metrics are computed over honest agents only; Byzantine state is frozen
    garbage by construction.
    """
    honest = pop.honest_mask
    values = spec.decoded(pop.state)[honest]
    counts = np.bincount(values, minlength=1)
    total = counts.sum()
    agreement = counts.max() / total if total else 0.0
    probs = counts[counts > 0] / total
    entropy = float(-(probs * np.log2(probs)).sum()) if total else 0.0
    speakers = int(spec.speakers(pop.state)[honest].sum()) if spec.speakers else 0
    return float(agreement), speakers, entropy


@dataclass
class RunResult:
    """Outcome of run_until.

    t_converge is the first round index whose legality then persisted for
    hold_window further rounds; held_for counts those further rounds actually
    verified.  trace rows are (round, agreement, legal, speakers, entropy).
    """

    converged: bool
    t_converge: int | None
    held_for: int
    rounds_run: int
    trace: np.ndarray
    population: Population
    legal_rounds: int = 0


def run_until(pop: Population, spec: ProtocolSpec,
              legal: Callable[[Population], bool],
              max_rounds: int, hold_window: int, master_seed: int,
              mode: SamplingMode = SamplingMode.PULL,
              byzantine_display: ByzantineDisplay | None = None,
              trace_every: int = 1,
              stop_on_converge: bool = True) -> RunResult:
    """Run until `legal` holds and keeps holding, or the budget runs out.

    Legality is evaluated on the initial state (round 0) and after every
    round.  Convergence at t requires legality at t and at each of the
    hold_window rounds after it; at most max_rounds rounds are executed, so
    t + hold_window must fit inside the budget.
    """
    if max_rounds < 0 or hold_window < 0:
        raise ContractError("max_rounds and hold_window must be non-negative")
    rows = []
    streak_start: int | None = None
    legal_rounds = 0

    def note(r: int, ok: bool) -> None:
        if trace_every > 0 and (r % trace_every == 0 or r == max_rounds):
            agreement, speakers, entropy = population_metrics(pop, spec)
            rows.append((r, agreement, int(ok), speakers, entropy))

    ok = bool(legal(pop))
    legal_rounds += ok
    if ok:
        streak_start = 0
    note(0, ok)
    t = 0
    while t < max_rounds:
        if (streak_start is not None and t - streak_start >= hold_window
                and stop_on_converge):
            break
        t += 1
        pop = step_round(pop, spec, master_seed, t, mode, byzantine_display)
        ok = bool(legal(pop))
        legal_rounds += ok
        if ok:
            if streak_start is None:
                streak_start = t
        else:
            streak_start = None
        note(t, ok)

    converged = streak_start is not None and (t - streak_start) >= hold_window
    trace = np.array(rows, dtype=np.float64) if rows else np.zeros((0, 5))
    return RunResult(
        converged=converged,
        t_converge=streak_start if converged else None,
        held_for=(t - streak_start) if converged else 0,
        rounds_run=t,
        trace=trace,
        population=pop,
        legal_rounds=legal_rounds,
    )
