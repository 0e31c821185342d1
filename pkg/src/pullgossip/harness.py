"""Experiment orchestration: configs, trial batches, statistics, calibration.

Reports are pure functions of their config: trial i always runs with master
seed config.seed + i, trials are merged by index, and the JSON serialization
is key-sorted with wall-clock time deliberately left out.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import clocks, consensus, dissemination
from .engine import (ByzantineDisplay, ContractError, InitStrategy, Population,
                     ProtocolSpec, RunResult, adversarial_init, byzantine_cap,
                     run_until)


# ---------------------------------------------------------------------------
# legal predicates


@dataclass(frozen=True)
class LegalPredicate:
    """A pure configuration test; legality is judged on honest agents only."""

    kind: str
    evaluator: Callable[[Population], bool]

    def __call__(self, pop: Population) -> bool:
        return bool(self.evaluator(pop))


def clocks_equal(spec: ProtocolSpec) -> LegalPredicate:
    def ev(pop: Population) -> bool:
        values = spec.decoded(pop.state)[pop.honest_mask]
        return bool(len(values) == 0 or (values == values[0]).all())
    return LegalPredicate("clocks_equal", ev)


def outputs_equal(b_maj: int | None = None) -> LegalPredicate:
    """All honest outputs equal b_maj; with b_maj None, merely all equal."""
    def ev(pop: Population) -> bool:
        out = pop.state.output[pop.honest_mask]
        if len(out) == 0:
            return True
        target = out[0] if b_maj is None else b_maj
        return bool((out == target).all())
    return LegalPredicate("outputs_equal", ev)


def custom_predicate(fn: Callable[[Population], bool]) -> LegalPredicate:
    return LegalPredicate("custom", fn)


# ---------------------------------------------------------------------------
# configuration


_CLOCK_PROTOCOLS = ("syn-simple", "syn-intermediate", "nested-intermediate",
                    "syn-clock-4bit", "syn-clock")
_DISSEMINATION_PROTOCOLS = ("certainty", "subphase", "phase-spread",
                            "syn-phase-spread-4bit", "syn-phase-spread")
_POWER_OF_TWO_T = ("syn-simple", "syn-intermediate", "nested-intermediate")

PROTOCOL_NAMES = ("maj-consensus",) + _CLOCK_PROTOCOLS + _DISSEMINATION_PROTOCOLS

_INIT_NAMES = ("uniform_random", "all_equal", "half_split", "max_spread_clocks")
_BYZ_KINDS = ("fixed", "random", "worst_opinion")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one batch of trials depends on.  Flat and serializable."""

    protocol: str
    n: int
    seed: int
    trials: int = 1
    max_rounds: int = 10_000
    hold_window: int = -1          # -1: default 10 * ceil(log2 n)
    t: int = 0                     # clock modulus, where applicable
    gamma: float = 8.0             # syn-clock helper-length factor
    gamma_phase: float = 20.0      # phase-spread schedule factor
    k1: int = 0                    # sources with input 1
    k0: int = 0                    # sources with input 0
    init: str = "uniform_random"
    init_value: int = 0
    byzantine: int = 0
    byzantine_display: str = "fixed"
    byzantine_value: int = 0
    threads: int = 1
    trace_every: int = 1

    def resolved_hold_window(self) -> int:
        if self.hold_window >= 0:
            return self.hold_window
        return 10 * math.ceil(math.log2(max(self.n, 2)))


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """All constraint violations, empty when the config is runnable."""
    bad: list[str] = []
    if cfg.protocol not in PROTOCOL_NAMES:
        bad.append(f"protocol: unknown {cfg.protocol!r}; choose from {', '.join(PROTOCOL_NAMES)}")
    if cfg.n < 2:
        bad.append(f"n: must be >= 2, got {cfg.n}")
    if cfg.trials < 1:
        bad.append(f"trials: must be >= 1, got {cfg.trials}")
    if cfg.max_rounds < 1:
        bad.append(f"max_rounds: must be >= 1, got {cfg.max_rounds}")
    if cfg.trace_every < 1:
        bad.append(f"trace_every: must be >= 1, got {cfg.trace_every}")
    if cfg.threads < 1:
        bad.append(f"threads: must be >= 1, got {cfg.threads}")
    if cfg.init not in _INIT_NAMES:
        bad.append(f"init: unknown {cfg.init!r}; choose from {', '.join(_INIT_NAMES)}")
    if cfg.byzantine_display not in _BYZ_KINDS:
        bad.append(f"byzantine_display: unknown {cfg.byzantine_display!r}")
    if cfg.protocol in _POWER_OF_TWO_T and not clocks.is_power_of_two(max(cfg.t, 0)):
        bad.append(f"t: {cfg.protocol} needs a power-of-two modulus, got {cfg.t}")
    if cfg.protocol in ("syn-clock", "syn-clock-4bit") and cfg.t < 2:
        bad.append(f"t: syn-clock needs a modulus >= 2, got {cfg.t}")
    if cfg.gamma <= 0:
        bad.append(f"gamma: must be positive, got {cfg.gamma}")
    if cfg.gamma_phase < 1:
        bad.append(f"gamma_phase: must be >= 1, got {cfg.gamma_phase}")
    if cfg.k1 < 0 or cfg.k0 < 0 or cfg.k1 + cfg.k0 > cfg.n:
        bad.append(f"sources: k1={cfg.k1}, k0={cfg.k0} do not fit in n={cfg.n}")
    if cfg.protocol in _DISSEMINATION_PROTOCOLS:
        if cfg.k1 + cfg.k0 == 0:
            bad.append("sources: dissemination protocols need k1 + k0 >= 1")
        elif cfg.k1 == cfg.k0:
            bad.append("sources: k1 = k0 leaves the majority bit undefined")
    if cfg.byzantine < 0:
        bad.append(f"byzantine: must be >= 0, got {cfg.byzantine}")
    elif cfg.byzantine > byzantine_cap(cfg.n):
        bad.append(f"byzantine: {cfg.byzantine} exceeds cap {byzantine_cap(cfg.n)} "
                   f"for n={cfg.n}")
    return bad


def require_valid(cfg: ExperimentConfig) -> None:
    bad = validate_config(cfg)
    if bad:
        raise ContractError("invalid config: " + "; ".join(bad))


def build_protocol(cfg: ExperimentConfig) -> ProtocolSpec:
    p = cfg.protocol
    if p == "maj-consensus":
        return consensus.maj_consensus_spec()
    if p == "syn-simple":
        return clocks.syn_simple_spec(cfg.t)
    if p == "syn-intermediate":
        return clocks.syn_intermediate_spec(cfg.t)
    if p == "nested-intermediate":
        return clocks.nested_intermediate_spec(cfg.t)
    if p == "syn-clock-4bit":
        return clocks.syn_clock_4bit_spec(cfg.t, cfg.n, cfg.gamma)
    if p == "syn-clock":
        return clocks.syn_clock_spec(cfg.t, cfg.n, cfg.gamma)
    if p == "certainty":
        return dissemination.certainty_spec(cfg.n, cfg.gamma)
    if p == "subphase":
        return dissemination.subphase_spec(cfg.n, cfg.gamma)
    if p == "phase-spread":
        return dissemination.phase_spread_spec(cfg.n, cfg.gamma_phase)
    if p == "syn-phase-spread-4bit":
        return dissemination.syn_phase_spread_4bit_spec(cfg.n, cfg.gamma,
                                                        cfg.gamma_phase)
    if p == "syn-phase-spread":
        return dissemination.syn_phase_spread_spec(cfg.n, cfg.gamma,
                                                   cfg.gamma_phase)
    raise ContractError(f"unknown protocol {cfg.protocol!r}")


def majority_bit(cfg: ExperimentConfig) -> int | None:
    """The target output bit, frozen from the source counts at setup time."""
    if cfg.k1 + cfg.k0 == 0:
        return None
    if cfg.k1 == cfg.k0:
        raise ContractError("k1 = k0: majority bit undefined")
    return 1 if cfg.k1 > cfg.k0 else 0


def default_predicate(cfg: ExperimentConfig, spec: ProtocolSpec) -> LegalPredicate:
    if cfg.protocol in _CLOCK_PROTOCOLS:
        return clocks_equal(spec)
    return outputs_equal(majority_bit(cfg))


def build_population(cfg: ExperimentConfig, spec: ProtocolSpec,
                     master_seed: int) -> Population:
    strategy = InitStrategy(name=cfg.init, value=cfg.init_value)
    sources = (cfg.k1, cfg.k0) if cfg.k1 + cfg.k0 else None
    return adversarial_init(spec, cfg.n, strategy, master_seed,
                            sources=sources, byzantine_count=cfg.byzantine)


# ---------------------------------------------------------------------------
# trial batches


@dataclass(frozen=True)
class TrialDigest:
    trial: int
    converged: bool
    t_converge: int | None
    held_for: int
    rounds_run: int


@dataclass
class TrialBatchReport:
    config: ExperimentConfig
    digests: list[TrialDigest]
    success_rate: float
    p50_rounds: float | None
    p95_rounds: float | None
    traces: list[np.ndarray] = field(repr=False)
    wall_clock_seconds: float = 0.0  # informational; never serialized

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "config": asdict(self.config),
            "success_rate": self.success_rate,
            "p50_rounds": self.p50_rounds,
            "p95_rounds": self.p95_rounds,
            "trials": [
                {"trial": d.trial, "converged": d.converged,
                 "t_converge": d.t_converge, "held_for": d.held_for,
                 "rounds_run": d.rounds_run}
                for d in self.digests
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"


def run_trial(cfg: ExperimentConfig, trial: int,
              stop_on_converge: bool = True) -> RunResult:
    spec = build_protocol(cfg)
    seed = cfg.seed + trial
    pop = build_population(cfg, spec, seed)
    legal = default_predicate(cfg, spec)
    byz = None
    if cfg.byzantine:
        byz = ByzantineDisplay(cfg.byzantine_display, cfg.byzantine_value)
    return run_until(pop, spec, legal, cfg.max_rounds,
                     cfg.resolved_hold_window(), seed,
                     byzantine_display=byz, trace_every=cfg.trace_every,
                     stop_on_converge=stop_on_converge)


def _quantile(xs: list[float], q: float) -> float | None:
    if not xs:
        return None
    with np.errstate(invalid="ignore"):
        v = float(np.quantile(np.array(xs, dtype=float), q))
    # interpolating between two infs (non-converged trials) yields inf or nan
    return v if math.isfinite(v) else None


def run_batch(cfg: ExperimentConfig,
              stop_on_converge: bool = True) -> TrialBatchReport:
    require_valid(cfg)
    build_protocol(cfg)  # surface parameter problems before any trial
    started = time.monotonic()

    def one(i: int) -> RunResult:
        return run_trial(cfg, i, stop_on_converge)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(one, range(cfg.trials)))
    else:
        results = [one(i) for i in range(cfg.trials)]

    digests = [TrialDigest(i, r.converged, r.t_converge, r.held_for, r.rounds_run)
               for i, r in enumerate(results)]
    rounds = [float(r.t_converge) if r.converged else math.inf for r in results]
    converged = sum(1 for r in results if r.converged)
    return TrialBatchReport(
        config=cfg,
        digests=digests,
        success_rate=converged / cfg.trials,
        p50_rounds=_quantile(rounds, 0.5),
        p95_rounds=_quantile(rounds, 0.95),
        traces=[r.trace for r in results],
        wall_clock_seconds=time.monotonic() - started,
    )


TRACE_HEADER = ("trial", "round", "agreement_fraction", "legal_flag",
                "speakers", "clock_entropy")


def write_trace_csv(report: TrialBatchReport, path: str) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(TRACE_HEADER)
        for trial, rows in enumerate(report.traces):
            for (rnd, agreement, legal_flag, speakers, entropy) in rows:
                wr.writerow([trial, int(rnd), f"{agreement:.6f}",
                             int(legal_flag), int(speakers), f"{entropy:.6f}"])


def write_report_json(report: TrialBatchReport, path: str) -> None:
    with open(path, "w") as f:
        f.write(report.to_json())


# ---------------------------------------------------------------------------
# sweeps and calibration


_SWEEP_AXES = ("t", "n", "gamma", "gamma_phase", "k1", "k0", "byzantine",
               "max_rounds", "trials")


def sweep(cfg: ExperimentConfig, axis: str, values: list) -> list[TrialBatchReport]:
    """One batch per axis value.  Every batch reuses cfg.seed, so batches
    differ only in the swept parameter, not in sampling luck."""
    if axis not in _SWEEP_AXES:
        raise ContractError(f"unknown sweep axis {axis!r}; choose from {_SWEEP_AXES}")
    out = []
    for v in values:
        typed = int(v) if axis not in ("gamma", "gamma_phase") else float(v)
        out.append(run_batch(replace(cfg, **{axis: typed})))
    return out


def calibrate(cfg: ExperimentConfig, target_quantile: float) -> int:
    """Empirical convergence-round quantile from a pilot batch.

    The number this returns is what gets frozen into regression thresholds;
    a pilot whose quantile is dragged to infinity by non-converged trials is
    an explicit failure, never a silently huge threshold.
    """
    if not 0 < target_quantile < 1:
        raise ContractError(f"target_quantile must be in (0, 1), got {target_quantile}")
    report = run_batch(cfg)
    rounds = [float(d.t_converge) if d.converged else math.inf
              for d in report.digests]
    # interpolating across non-converged trials yields inf or nan
    with np.errstate(invalid="ignore"):
        v = float(np.quantile(np.array(rounds), target_quantile))
    if not math.isfinite(v):
        raise ContractError(
            f"calibration pilot: quantile {target_quantile} not reached; "
            f"only {report.success_rate:.0%} of {cfg.trials} trials converged "
            f"within max_rounds={cfg.max_rounds}")
    return math.ceil(v)
