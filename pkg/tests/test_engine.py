"""Engine semantics: snapshots, replay, initialization, Byzantine handling."""
import numpy as np
import pytest

from pullgossip.bits import BitString
from pullgossip.consensus import maj_consensus_spec
from pullgossip.clocks import syn_simple_spec
from pullgossip.dissemination import certainty_spec
from pullgossip.engine import (BatchState, ByzantineDisplay, ContractError,
                               InitStrategy, Population, SamplingMode,
                               adversarial_init, batch_from_state, byzantine_cap,
                               population_metrics, run_until, sample_targets,
                               step_round)
from pullgossip import rng as crng


def make_pop(spec, values, sources_mask=None, inputs=None):
    values = np.asarray(values, dtype=np.int64)
    n = len(values)
    cols = spec.init_space.from_values(values)
    state = BatchState(cols=cols, visible=np.zeros(n, dtype=np.int64),
                       output=np.zeros(n, dtype=np.int64),
                       is_source=np.zeros(n, dtype=bool) if sources_mask is None
                       else np.asarray(sources_mask, dtype=bool),
                       input_bit=np.zeros(n, dtype=np.int64) if inputs is None
                       else np.asarray(inputs, dtype=np.int64))
    spec.refresh_visible(state)
    return Population(state, np.zeros(n, dtype=bool), spec.ell)


def test_round_reads_the_start_snapshot():
    # two agents pull each other; with snapshot semantics neither sees the
    # other's same-round update
    spec = syn_simple_spec(4)
    pop = make_pop(spec, [1, 3])
    targets = np.array([[1, 1], [0, 0]])
    nxt = step_round(pop, spec, 0, targets_override=targets)
    # agent 0: maj(1,3,3)=3 -> 0;  agent 1: maj(3,1,1)=1 -> 2
    assert nxt.state.cols["clock"].tolist() == [0, 2]
    # input population untouched
    assert pop.state.cols["clock"].tolist() == [1, 3]


def test_step_round_replays_bit_for_bit():
    spec = maj_consensus_spec()
    pop = adversarial_init(spec, 64, InitStrategy("uniform_random"), 5)
    a = step_round(pop, spec, 5, 3)
    b = step_round(pop, spec, 5, 3)
    assert (a.state.visible == b.state.visible).all()
    assert (a.state.cols["opinion"] == b.state.cols["opinion"]).all()
    c = step_round(pop, spec, 6, 3)  # different seed, same round
    assert (c.state.cols["opinion"] != a.state.cols["opinion"]).any()


def test_per_agent_update_equals_batch_kernel():
    spec = syn_simple_spec(8)
    pop = adversarial_init(spec, 40, InitStrategy("uniform_random"), 9)
    targets = crng.draw_ints(12, crng.PURPOSE_TARGETS, 0, np.arange(40), 2, 40)
    nxt = step_round(pop, spec, 12, 0, targets_override=targets)
    for i in range(40):
        before = pop.agent(i)
        seen = [BitString(spec.ell, int(pop.state.visible[t])) for t in targets[i]]
        after = spec.update(before, seen)
        assert after.private_memory["clock"] == nxt.state.cols["clock"][i]
        assert after.visible.value == nxt.state.visible[i]


def test_bit_mode_equals_pull_for_one_bit_messages():
    spec = maj_consensus_spec()
    assert spec.ell == 1
    pop = adversarial_init(spec, 128, InitStrategy("uniform_random"), 21)
    a, b = pop, pop
    for r in range(5):
        a = step_round(a, spec, 33, r, mode=SamplingMode.PULL)
        b = step_round(b, spec, 33, r, mode=SamplingMode.BIT)
        assert (a.state.visible == b.state.visible).all()


def test_bit_mode_needs_the_bitwise_independence_flag():
    spec = certainty_spec(64)
    pop = adversarial_init(spec, 16, InitStrategy("uniform_random"), 2,
                           sources=(1, 0))
    with pytest.raises(ContractError, match="bitwise independent"):
        step_round(pop, spec, 0, mode=SamplingMode.BIT)


def test_visible_width_is_enforced():
    base = syn_simple_spec(8)
    from dataclasses import replace

    def bad_refresh(state):
        state.visible = np.full(state.n, 8, dtype=np.int64)  # needs 4 bits

    def bad_kernel(state, observed, ctx):
        bad_refresh(state)

    bad = replace(base, kernel=bad_kernel)
    pop = make_pop(base, [0, 1, 2])
    with pytest.raises(ContractError, match="wider"):
        step_round(pop, bad, 0)


def test_sample_targets_matches_engine_stream():
    n, eta = 30, 3
    grid = crng.draw_ints(77, crng.PURPOSE_TARGETS, 5, np.arange(n), eta, n)
    for agent in (0, 7, 29):
        stream = crng.AgentStream(77, crng.PURPOSE_TARGETS, 5, agent)
        assert sample_targets(stream, n, eta) == [int(v) for v in grid[agent]]
    with pytest.raises(ContractError):
        sample_targets(crng.AgentStream(0, 1, 0, 0), 0, 2)


# ---------------------------------------------------------------------------
# initialization


def test_init_strategies_set_headline_values():
    spec = syn_simple_spec(16)
    n = 10
    eq = adversarial_init(spec, n, InitStrategy("all_equal", value=5), 1)
    assert (eq.state.cols["clock"] == 5).all()

    half = adversarial_init(spec, n, InitStrategy("half_split"), 1)
    assert half.state.cols["clock"].tolist() == [0] * 5 + [8] * 5

    spread = adversarial_init(spec, n, InitStrategy("max_spread_clocks"), 1)
    assert spread.state.cols["clock"].tolist() == list(range(10))

    custom = adversarial_init(spec, 3, InitStrategy("custom", bits=(3, 0, 15)), 1)
    assert custom.state.cols["clock"].tolist() == [3, 0, 15]


def test_init_strategy_validation():
    spec = syn_simple_spec(8)
    with pytest.raises(ContractError):
        adversarial_init(spec, 4, InitStrategy("all_equal", value=8), 1)
    with pytest.raises(ContractError):
        adversarial_init(spec, 4, InitStrategy("custom", bits=(1, 2)), 1)
    with pytest.raises(ContractError):
        adversarial_init(spec, 4, InitStrategy("custom", bits=(0, 0, 0, 9)), 1)
    with pytest.raises(ContractError):
        adversarial_init(spec, 4, InitStrategy("no_such"), 1)


def test_uniform_random_init_is_seeded_and_covers_the_range():
    spec = syn_simple_spec(16)
    a = adversarial_init(spec, 400, InitStrategy("uniform_random"), 3)
    b = adversarial_init(spec, 400, InitStrategy("uniform_random"), 3)
    c = adversarial_init(spec, 400, InitStrategy("uniform_random"), 4)
    assert (a.state.cols["clock"] == b.state.cols["clock"]).all()
    assert (a.state.cols["clock"] != c.state.cols["clock"]).any()
    assert set(a.state.cols["clock"].tolist()) == set(range(16))


def test_source_roles_and_counts():
    spec = maj_consensus_spec()
    pop = adversarial_init(spec, 50, InitStrategy("uniform_random"), 8,
                           sources=(3, 2))
    src = pop.state.is_source
    assert src.sum() == 5
    assert pop.state.input_bit[src].sum() == 3
    assert (pop.state.input_bit[~src] == 0).all()
    with pytest.raises(ContractError):
        adversarial_init(spec, 4, InitStrategy("uniform_random"), 8, sources=(3, 2))


def test_byzantine_cap_and_role_disjointness():
    assert byzantine_cap(1000) == 15
    spec = maj_consensus_spec()
    with pytest.raises(ContractError, match="cap"):
        adversarial_init(spec, 100, InitStrategy("uniform_random"), 1,
                         byzantine_count=7)
    pop = adversarial_init(spec, 100, InitStrategy("uniform_random"), 1,
                           sources=(4, 0), byzantine_count=7,
                           allow_byzantine_overflow=True)
    assert pop.byzantine_mask.sum() == 7
    assert not (pop.byzantine_mask & pop.state.is_source).any()
    assert len(pop.byzantine) == 7


# ---------------------------------------------------------------------------
# Byzantine displays


def test_byzantine_state_is_frozen_and_display_overridden():
    spec = maj_consensus_spec()
    n = 8
    pop = make_pop(spec, [0] * n)
    pop = Population(pop.state, np.array([True] + [False] * (n - 1)), spec.ell)
    pop.state.cols["opinion"][0] = 0
    spec.refresh_visible(pop.state)

    # everyone pulls the byzantine agent twice; its display lies
    targets = np.zeros((n, 2), dtype=np.int64)
    byz = ByzantineDisplay("fixed", 1)
    nxt = step_round(pop, spec, 0, byzantine_display=byz, targets_override=targets)
    honest = ~pop.byzantine_mask
    # maj(0,1,1) = 1: the fixed-1 display flips every honest agent
    assert (nxt.state.cols["opinion"][honest] == 1).all()
    # the byzantine agent's own state never updates
    assert nxt.state.cols["opinion"][0] == 0
    assert nxt.state.visible[0] == 0


def test_byzantine_display_kinds():
    snapshot = np.array([1, 1, 1, 0, 0], dtype=np.int64)
    mask = np.array([False, False, False, True, True])
    ByzantineDisplay("fixed", 1).apply(snapshot, mask, 1, 0, 0)
    assert snapshot.tolist() == [1, 1, 1, 1, 1]

    snapshot = np.array([1, 1, 1, 0, 0], dtype=np.int64)
    ByzantineDisplay("worst_opinion").apply(snapshot, mask, 1, 0, 0)
    assert snapshot.tolist() == [1, 1, 1, 0, 0]  # complement of modal honest 1

    snapshot = np.array([0, 0, 0, 0, 0], dtype=np.int64)
    ByzantineDisplay("random").apply(snapshot, mask, 3, 5, 2)
    assert (snapshot[:3] == 0).all()
    assert snapshot[3] < 8 and snapshot[4] < 8
    with pytest.raises(ContractError):
        ByzantineDisplay("nope").apply(snapshot, mask, 1, 0, 0)


# ---------------------------------------------------------------------------
# runs


def test_run_until_hold_window_semantics():
    spec = maj_consensus_spec()
    pop = adversarial_init(spec, 16, InitStrategy("all_equal", value=1), 2)
    from pullgossip.harness import outputs_equal
    legal = outputs_equal(1)

    res = run_until(pop.copy(), spec, legal, max_rounds=5, hold_window=5, master_seed=2)
    assert res.converged and res.t_converge == 0 and res.held_for == 5

    # budget too small for the hold window
    res = run_until(pop.copy(), spec, legal, max_rounds=4, hold_window=5, master_seed=2)
    assert not res.converged and res.t_converge is None

    res = run_until(pop.copy(), spec, legal, max_rounds=0, hold_window=0, master_seed=2)
    assert res.converged and res.rounds_run == 0


def test_run_until_trace_rows():
    spec = maj_consensus_spec()
    pop = adversarial_init(spec, 32, InitStrategy("half_split"), 3)
    res = run_until(pop, spec, lambda p: False, max_rounds=6, hold_window=0,
                    master_seed=3, trace_every=2)
    # rounds 0, 2, 4, 6 noted; round 6 is also max_rounds
    assert res.trace.shape == (4, 5)
    assert res.trace[:, 0].tolist() == [0.0, 2.0, 4.0, 6.0]
    assert (res.trace[:, 2] == 0).all()
    assert not res.converged and res.rounds_run == 6

    res = run_until(pop, spec, lambda p: False, max_rounds=3, hold_window=0,
                    master_seed=3, trace_every=0)
    assert res.trace.shape == (0, 5)


def test_run_until_stop_on_converge_false_judges_the_final_streak():
    spec = maj_consensus_spec()
    pop = adversarial_init(spec, 64, InitStrategy("half_split"), 7)
    from pullgossip.harness import outputs_equal
    res = run_until(pop, spec, outputs_equal(), 200, 10, 7, stop_on_converge=False)
    assert res.rounds_run == 200
    assert res.converged
    assert res.held_for >= 10
    # legality, once reached, never broke: the tail is one legal streak
    legal = res.trace[:, 2].astype(bool)
    first = int(np.flatnonzero(legal)[0])
    assert legal[first:].all()
    assert res.t_converge == first


def test_population_metrics_hand_example():
    spec = syn_simple_spec(4)
    pop = make_pop(spec, [0, 0, 1, 3])
    agreement, speakers, entropy = population_metrics(pop, spec)
    assert agreement == 0.5
    assert speakers == 0  # no speakers hook on clocks
    # distribution (2,1,1)/4: entropy = 1.5 bits
    assert abs(entropy - 1.5) < 1e-12


def test_agent_state_round_trip():
    spec = syn_simple_spec(8)
    pop = make_pop(spec, [5, 2])
    st = pop.agent(0)
    assert st.visible.value == 5
    assert st.private_memory == {"clock": 5}
    back = batch_from_state(st)
    assert back.cols["clock"][0] == 5
    assert back.n == 1
