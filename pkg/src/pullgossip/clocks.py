"""Self-stabilizing synchronized clocks with tiny messages.

Three constructions, each built on the previous one:

* syn-simple: the whole clock is the message.  Agents pull two clocks,
  take the bitwise majority with their own, and increment.  Requires the
  modulus to be a power of two; messages are log2(T) bits.

* syn-intermediate: a tower of nested clocks.  Only the innermost 2-bit
  clock plus one relay bit are displayed (3 bits total).  Each level's clock
  is broadcast one bit per round through the relay bit of the level below;
  agents collect those bits in small buffers and apply a majority step to a
  level's clock exactly when the level below completes a loop.

* syn-clock: an arbitrary-modulus clock.  A power-of-two helper clock is kept
  by syn-intermediate; a coarse counter advances once per helper loop, and
  its bits reach agreement through a majority bit displayed on a fourth wire.
  The output clock is helper + counter * helper_modulus, reduced mod T.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as crng
from .bits import BitString, require_same_width
from .consensus import maj3_array
from .engine import BatchState, ContractError, InitSpace, ProtocolSpec, UpdateContext


# ---------------------------------------------------------------------------
# primitives


def bitwise_majority(x: BitString, y: BitString, z: BitString) -> BitString:
    """Per-position majority of three equal-width bit strings."""
    w = require_same_width(x, y, z)
    v = (x.value & y.value) | (x.value & z.value) | (y.value & z.value)
    return BitString(w, v)


def is_power_of_two(t: int) -> bool:
    return t >= 1 and (t & (t - 1)) == 0


def syn_simple_update(clock: int, pulled: tuple[int, int], modulus: int,
                      increment: bool = True) -> int:
    """One agent's syn-simple step: bitwise majority of three clocks, then +1."""
    if not is_power_of_two(modulus) or modulus < 2:
        raise ContractError(f"syn-simple modulus must be a power of two >= 2, got {modulus}")
    m = (clock & pulled[0]) | (clock & pulled[1]) | (pulled[0] & pulled[1])
    return (m + 1) % modulus if increment else m


@dataclass(frozen=True, slots=True)
class ClockValue:
    """A clock reading together with its modulus."""

    value: int
    modulus: int

    def __post_init__(self):
        if self.modulus < 1:
            raise ContractError(f"modulus must be positive, got {self.modulus}")
        if not 0 <= self.value < self.modulus:
            raise ContractError(f"clock value {self.value} outside [0, {self.modulus})")


def compose_clock(small: ClockValue, coarse: int, modulus: int) -> ClockValue:
    """Combine a fast small clock with a coarse counter of its loops.

    The result advances by one per round whenever `small` does and `coarse`
    advances by one per loop of `small`.
    """
    return ClockValue((small.value + coarse * small.modulus) % modulus, modulus)


# ---------------------------------------------------------------------------
# syn-simple


class _ClockSpace(InitSpace):
    def __init__(self, modulus: int):
        self.value_count = modulus

    def from_values(self, values: np.ndarray) -> dict[str, np.ndarray]:
        return {"clock": values.astype(np.int64)}

    def random_cols(self, n: int, master_seed: int) -> dict[str, np.ndarray]:
        clock = crng.draw_ints(master_seed, crng.PURPOSE_INIT, 0,
                               np.arange(n), 1, self.value_count)[:, 0]
        return {"clock": clock}


def syn_simple_spec(modulus: int, increment: bool = True) -> ProtocolSpec:
    """PULL(2, log2 T) clock sync for a power-of-two modulus T."""
    if not is_power_of_two(modulus) or modulus < 2:
        raise ContractError(f"syn-simple modulus must be a power of two >= 2, got {modulus}")
    ell = modulus.bit_length() - 1
    mask = modulus - 1

    def kernel(state: BatchState, observed: np.ndarray, ctx: UpdateContext) -> None:
        c = maj3_array(state.cols["clock"], observed[:, 0], observed[:, 1])
        if increment:
            c = (c + 1) & mask
        state.cols["clock"] = c
        refresh(state)

    def refresh(state: BatchState) -> None:
        state.visible = state.cols["clock"].copy()

    return ProtocolSpec(
        name="syn-simple" if increment else "syn-simple-frozen",
        eta=2,
        ell=ell,
        init_space=_ClockSpace(modulus),
        kernel=kernel,
        refresh_visible=refresh,
        bitwise_independent=True,
        decode=lambda s: s.cols["clock"],
        output_modulus=modulus,
    )


# ---------------------------------------------------------------------------
# message-length ladder


@dataclass(frozen=True, slots=True)
class EllSequence:
    """Message widths of the nested clock levels, outermost first."""

    lengths: tuple[int, ...]

    @property
    def tau(self) -> int:
        return len(self.lengths)


def ell_sequence(modulus: int) -> EllSequence:
    """Widths start at log2(T) and contract via w -> ceil(log2 w) + 1 until 3.

    A level of width w is rebroadcast through a clock of ceil(log2 w) bits
    plus one relay bit, which is where the recurrence comes from.  Moduli
    of at most 8 need no nesting at all.
    """
    if not is_power_of_two(modulus) or modulus < 2:
        raise ContractError(f"modulus must be a power of two >= 2, got {modulus}")
    w = modulus.bit_length() - 1
    lengths = [w]
    while lengths[-1] > 3:
        lengths.append(math.ceil(math.log2(lengths[-1])) + 1)
    return EllSequence(tuple(lengths))


def log2_star(x: float) -> int:
    """Iterations of log2 until the value drops to 1 or below."""
    k = 0
    while x > 1.0:
        x = math.log2(x)
        k += 1
    return k


# ---------------------------------------------------------------------------
# syn-intermediate: the nested clock tower


@dataclass(frozen=True)
class TowerLayout:
    """Shapes of a nested clock tower for a power-of-two modulus.

    Level 0 is the actual clock mod T; level tau-1 is the 2-bit clock on the
    wire.  widths[j] is the bit width of level j's clock, moduli[j] its
    modulus, and message_widths[j] the width of the level's full message
    (clock bits plus, above level 0, one relay bit).  superphase is the
    number of rounds between two increments of level 0.
    """

    modulus: int
    ells: tuple[int, ...]
    widths: tuple[int, ...]
    moduli: tuple[int, ...]
    message_widths: tuple[int, ...]

    @property
    def tau(self) -> int:
        return len(self.ells)

    @property
    def superphase(self) -> int:
        s = 1
        for m in self.moduli[1:]:
            s *= m
        return s

    @property
    def wire_width(self) -> int:
        return self.widths[-1] if self.tau == 1 else self.widths[-1] + 1


def tower_layout(modulus: int) -> TowerLayout:
    seq = ell_sequence(modulus)
    widths = [seq.lengths[0]]
    for ell in seq.lengths[1:]:
        widths.append(ell - 1)
    moduli = [modulus] + [1 << w for w in widths[1:]]
    message_widths = [widths[0]] + [w + 1 for w in widths[1:]]
    return TowerLayout(modulus, seq.lengths, tuple(widths), tuple(moduli),
                       tuple(message_widths))


def _tower_cols(layout: TowerLayout) -> list[str]:
    names = [f"c{j}" for j in range(layout.tau)]
    for j in range(layout.tau - 1):
        for side in "ab":
            names += [f"s{j}{side}_bits", f"s{j}{side}_n"]
    return names


def _relay_bits(cols: dict[str, np.ndarray], layout: TowerLayout) -> list:
    """Relay bit displayed at each level; entry 0 is unused.

    Level j shows bit number c_j of the message one level down (clock bits
    first, then that level's own relay bit).  Indices past the end of the
    message can occur because clock moduli are rounded up to powers of two;
    those idle slots display 0 and are never filed by receivers.
    """
    bits: list = [None]
    for j in range(1, layout.tau):
        idx = cols[f"c{j}"]
        below_w = layout.widths[j - 1]
        clock_bit = (cols[f"c{j - 1}"] >> np.minimum(idx, below_w - 1)) & 1
        bit = np.where(idx < below_w, clock_bit, 0)
        if j - 1 >= 1:
            bit = np.where(idx == below_w, bits[j - 1], bit)
        bits.append(bit.astype(np.int64))
    return bits


def _push_bits(cols: dict[str, np.ndarray], level: int, side: str,
               bit: np.ndarray, where: np.ndarray, cap: int) -> None:
    """Append observed bits under `where`; oldest bits fall out at the cap."""
    bits = cols[f"s{level}{side}_bits"]
    count = cols[f"s{level}{side}_n"]
    at_cap = count >= cap
    appended = bits | (bit << np.minimum(count, cap - 1))
    shifted = (bits >> 1) | (bit << (cap - 1))
    new_bits = np.where(at_cap, shifted, appended)
    new_count = np.minimum(count + 1, cap)
    cols[f"s{level}{side}_bits"] = np.where(where, new_bits, bits)
    cols[f"s{level}{side}_n"] = np.where(where, new_count, count)


def _pop_bits(cols: dict[str, np.ndarray], level: int, side: str,
              own_clock: np.ndarray, width: int, where: np.ndarray) -> np.ndarray:
    """Drain a buffer into a width-bit observation, self-padding the gap.

    Before stabilization a buffer can hold fewer than `width` bits; missing
    positions are filled from the agent's own clock, which makes the majority
    step a no-op on those positions.
    """
    bits = cols[f"s{level}{side}_bits"]
    count = np.minimum(cols[f"s{level}{side}_n"], width)
    have = (np.int64(1) << count) - 1
    obs = (bits & have) | (own_clock & ~have)
    cols[f"s{level}{side}_bits"] = np.where(where, 0, bits)
    cols[f"s{level}{side}_n"] = np.where(where, 0, cols[f"s{level}{side}_n"])
    return obs


class _TowerSpace(InitSpace):
    def __init__(self, layout: TowerLayout):
        self.layout = layout
        self.value_count = layout.modulus

    def from_values(self, values: np.ndarray) -> dict[str, np.ndarray]:
        lay = self.layout
        n = len(values)
        cols: dict[str, np.ndarray] = {}
        v = values.astype(np.int64)
        for j in range(lay.tau - 1, 0, -1):
            cols[f"c{j}"] = v % lay.moduli[j]
            v = v // lay.moduli[j]
        cols["c0"] = v % lay.modulus
        for j in range(lay.tau - 1):
            for side in "ab":
                cols[f"s{j}{side}_bits"] = np.zeros(n, dtype=np.int64)
                cols[f"s{j}{side}_n"] = np.zeros(n, dtype=np.int64)
        return cols

    def random_cols(self, n: int, master_seed: int) -> dict[str, np.ndarray]:
        lay = self.layout
        agents = np.arange(n)
        cols: dict[str, np.ndarray] = {}
        tag = 0
        for j in range(lay.tau):
            cols[f"c{j}"] = crng.draw_ints(master_seed, crng.PURPOSE_INIT, tag,
                                           agents, 1, lay.moduli[j])[:, 0]
            tag += 1
        for j in range(lay.tau - 1):
            cap = lay.widths[j]
            for side in "ab":
                cnt = crng.draw_ints(master_seed, crng.PURPOSE_INIT, tag,
                                     agents, 1, cap + 1)[:, 0]
                raw = crng.draw_ints(master_seed, crng.PURPOSE_INIT, tag + 1,
                                     agents, 1, 1 << cap)[:, 0]
                cols[f"s{j}{side}_bits"] = raw & ((np.int64(1) << cnt) - 1)
                cols[f"s{j}{side}_n"] = cnt
                tag += 2
        return cols


def tower_decode(cols: dict[str, np.ndarray], layout: TowerLayout) -> np.ndarray:
    """Round-granularity clock mod T: the tower read as an odometer."""
    v = cols["c0"].copy()
    for j in range(1, layout.tau):
        v = v * layout.moduli[j] + cols[f"c{j}"]
    return v % layout.modulus


def syn_intermediate_spec(modulus: int) -> ProtocolSpec:
    """3-bit clock sync for a power-of-two modulus via a nested clock tower."""
    lay = tower_layout(modulus)
    if lay.tau == 1:
        # no nesting needed; the plain protocol already fits in <= 3 bits
        base = syn_simple_spec(modulus)
        return ProtocolSpec(
            name="syn-intermediate", eta=2, ell=base.ell,
            init_space=base.init_space, kernel=base.kernel,
            refresh_visible=base.refresh_visible, bitwise_independent=True,
            decode=base.decode, output_modulus=modulus)

    tau = lay.tau
    top = tau - 1
    top_mask = lay.moduli[top] - 1
    top_w = lay.widths[top]

    def refresh(state: BatchState) -> None:
        relay = _relay_bits(state.cols, lay)[top]
        state.visible = state.cols[f"c{top}"] | (relay << top_w)

    def kernel(state: BatchState, observed: np.ndarray, ctx: UpdateContext) -> None:
        cols = state.cols
        obs_clock = (observed[:, 0] & top_mask, observed[:, 1] & top_mask)
        obs_relay = ((observed[:, 0] >> top_w) & 1, (observed[:, 1] >> top_w) & 1)

        # file the pulled relay bits: walk down from the level just below the
        # wire, following relay-slot indices, using this agent's own clocks
        # as the index book-keeping (they agree with the senders' once
        # synchronized, and any bounded choice is fine before that)
        idx = cols[f"c{top}"].copy()
        pending = np.ones(ctx.n, dtype=bool)
        for level in range(tau - 2, -1, -1):
            land = pending & (idx < lay.widths[level])
            if land.any():
                for side, bit in zip("ab", obs_relay):
                    _push_bits(cols, level, side, bit, land, lay.widths[level])
            if level >= 1:
                pending = pending & (idx == lay.widths[level])
                idx = np.where(pending, cols[f"c{level}"], idx)
            else:
                pending = np.zeros(ctx.n, dtype=bool)

        # wire-level clock: majority with the two pulled clocks, then +1
        c = maj3_array(cols[f"c{top}"], obs_clock[0], obs_clock[1])
        c = (c + 1) & top_mask
        cols[f"c{top}"] = c
        wrapped = c == 0

        # each completed loop releases one majority step one level up
        for level in range(tau - 2, -1, -1):
            if not wrapped.any():
                break
            own = cols[f"c{level}"]
            s1 = _pop_bits(cols, level, "a", own, lay.widths[level], wrapped)
            s2 = _pop_bits(cols, level, "b", own, lay.widths[level], wrapped)
            new = (maj3_array(own, s1, s2) + 1) % lay.moduli[level]
            cols[f"c{level}"] = np.where(wrapped, new, own)
            wrapped = wrapped & (new == 0)

        refresh(state)

    return ProtocolSpec(
        name="syn-intermediate",
        eta=2,
        ell=lay.wire_width,
        init_space=_TowerSpace(lay),
        kernel=kernel,
        refresh_visible=refresh,
        bitwise_independent=True,
        decode=lambda s: tower_decode(s.cols, lay),
        output_modulus=modulus,
    )


# ---------------------------------------------------------------------------
# syn-clock: arbitrary modulus


def t_prime(modulus: int, n: int, gamma: float) -> int:
    """Modulus of the power-of-two helper clock inside syn-clock.

    Smallest power of two strictly greater than
    log2(T) * (gamma*log2(n) + gamma*max(1, log2(log2(T)))).
    """
    if modulus < 2:
        raise ContractError(f"syn-clock modulus must be >= 2, got {modulus}")
    if n < 2:
        raise ContractError(f"population bound must be >= 2, got {n}")
    if gamma <= 0:
        raise ContractError(f"gamma must be positive, got {gamma}")
    lt = math.log2(modulus)
    x = lt * (gamma * math.log2(n) + gamma * max(1.0, math.log2(lt) if lt > 1 else 1.0))
    p = 1
    while p <= x:
        p *= 2
    return p


@dataclass(frozen=True)
class SynClockLayout:
    """Derived shapes of a syn-clock instance."""

    modulus: int
    helper_modulus: int
    counter_bits: int
    window: int  # rounds each counter bit stays on display
    tower: TowerLayout


def syn_clock_layout(modulus: int, n: int, gamma: float = 8.0) -> SynClockLayout:
    helper = t_prime(modulus, n, gamma)
    counter_bits = max(1, math.ceil(math.log2(modulus)))
    window = math.ceil(gamma * math.log2(n))
    if helper < window * counter_bits:
        raise ContractError(
            "helper clock too short to display every counter bit; raise gamma")
    return SynClockLayout(modulus, helper, counter_bits, window,
                          tower_layout(helper))


class _SynClockSpace(InitSpace):
    def __init__(self, layout: SynClockLayout):
        self.layout = layout
        self.value_count = layout.modulus
        self._tower_space = _TowerSpace(layout.tower)

    def from_values(self, values: np.ndarray) -> dict[str, np.ndarray]:
        v = values.astype(np.int64)
        cols = self._tower_space.from_values(v % self.layout.helper_modulus)
        cols["counter"] = v // self.layout.helper_modulus
        return cols

    def random_cols(self, n: int, master_seed: int) -> dict[str, np.ndarray]:
        cols = self._tower_space.random_cols(n, master_seed)
        cols["counter"] = crng.draw_ints(master_seed, crng.PURPOSE_INIT, 900,
                                         np.arange(n), 1,
                                         1 << self.layout.counter_bits)[:, 0]
        return cols


def syn_clock_4bit_spec(modulus: int, n: int, gamma: float = 8.0) -> ProtocolSpec:
    """Clock mod T for arbitrary T >= 2, on 4-bit messages.

    Three message bits run syn-intermediate for the helper clock; the fourth
    carries one bit of the coarse counter, chosen by the helper clock so each
    bit gets a long consecutive display window, and repaired by maj3.
    """
    lay = syn_clock_layout(modulus, n, gamma)
    inner = syn_intermediate_spec(lay.helper_modulus)
    tower = lay.tower
    cmask = (1 << lay.counter_bits) - 1
    wire = inner.ell  # 3 for any realistic helper modulus

    def bit_index(helper_value: np.ndarray) -> np.ndarray:
        return (helper_value // lay.window) % lay.counter_bits

    def refresh(state: BatchState) -> None:
        inner.refresh_visible(state)
        j = bit_index(tower_decode(state.cols, tower))
        state.visible = state.visible | (((state.cols["counter"] >> j) & 1) << wire)

    def kernel(state: BatchState, observed: np.ndarray, ctx: UpdateContext) -> None:
        cols = state.cols
        helper_pre = tower_decode(cols, tower)
        j = bit_index(helper_pre)
        own_bit = (cols["counter"] >> j) & 1
        pulled = ((observed[:, 0] >> wire) & 1, (observed[:, 1] >> wire) & 1)
        new_bit = maj3_array(own_bit, pulled[0], pulled[1])
        counter = (cols["counter"] & ~(np.int64(1) << j)) | (new_bit << j)

        inner.kernel(state, observed & ((1 << wire) - 1), ctx)

        helper_post = tower_decode(cols, tower)
        counter = np.where(helper_post == 0, (counter + 1) % lay.modulus,
                           counter & cmask)
        cols["counter"] = counter
        refresh(state)

    def decode(state: BatchState) -> np.ndarray:
        helper = tower_decode(state.cols, tower)
        return (helper + state.cols["counter"] * lay.helper_modulus) % lay.modulus

    return ProtocolSpec(
        name="syn-clock-4bit",
        eta=2,
        ell=wire + 1,
        init_space=_SynClockSpace(lay),
        kernel=kernel,
        refresh_visible=refresh,
        bitwise_independent=True,
        decode=decode,
        output_modulus=modulus,
    )


def syn_clock_spec(modulus: int, n: int, gamma: float = 8.0) -> ProtocolSpec:
    """The 4-bit clock passed through the message reducer: 3-bit messages."""
    from .reducer import emulate

    spec = emulate(syn_clock_4bit_spec(modulus, n, gamma))
    return ProtocolSpec(
        name="syn-clock", eta=spec.eta, ell=spec.ell,
        init_space=spec.init_space, kernel=spec.kernel,
        refresh_visible=spec.refresh_visible,
        bitwise_independent=spec.bitwise_independent,
        decode=spec.decode, output_modulus=modulus, speakers=spec.speakers)


def nested_intermediate_spec(modulus: int) -> ProtocolSpec:
    """Cross-check construction: repeatedly compile syn-simple down to 3 bits.

    Functionally interchangeable with syn_intermediate_spec but slower by the
    product of the per-layer phase lengths, since each compilation layer runs
    one inner round per phase.  Kept so the direct tower and the generic
    compiler can be checked against each other.
    """
    from .reducer import emulate

    spec = syn_simple_spec(modulus)
    while spec.ell > 3:
        spec = emulate(spec)
    return ProtocolSpec(
        name="nested-intermediate", eta=spec.eta, ell=spec.ell,
        init_space=spec.init_space, kernel=spec.kernel,
        refresh_visible=spec.refresh_visible,
        bitwise_independent=spec.bitwise_independent,
        decode=spec.decode, output_modulus=modulus, speakers=spec.speakers)
