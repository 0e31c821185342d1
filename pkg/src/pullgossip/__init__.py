"""Self-stabilizing gossip protocols with tiny messages, simulated exactly.

The engine runs synchronous rounds in which every agent reads the visible
parts of a few uniformly sampled agents; protocols are column-vectorized
kernels over the population.  Clock synchronization, message-width
compilation, and majority-bit dissemination are built on top.
"""

from .bits import BitString, WidthError
from .clocks import (ClockValue, EllSequence, SynClockLayout, TowerLayout,
                     bitwise_majority, compose_clock, ell_sequence,
                     log2_star, nested_intermediate_spec, syn_clock_4bit_spec,
                     syn_clock_layout, syn_clock_spec, syn_intermediate_spec,
                     syn_simple_spec, syn_simple_update, t_prime,
                     tower_decode, tower_layout)
from .consensus import maj3, maj3_array, maj_consensus_spec, maj_consensus_update
from .dissemination import (PhaseKind, PhaseSchedule, certainty_round,
                            certainty_spec, certified_value, oracle_period,
                            parity_display, phase_schedule, phase_spread_round,
                            phase_spread_spec, speaker_counts, subphase_period,
                            subphase_round, subphase_spec,
                            syn_phase_spread_4bit_spec, syn_phase_spread_spec)
from .engine import (AgentState, BatchState, ByzantineDisplay, ContractError,
                     InitStrategy, Population, ProtocolSpec, RunResult,
                     SamplingMode, UpdateContext, adversarial_init,
                     byzantine_cap, population_metrics, run_until,
                     sample_targets, step_round)
from .harness import (ExperimentConfig, LegalPredicate, TrialBatchReport,
                      TrialDigest, build_protocol, calibrate, clocks_equal,
                      custom_predicate, majority_bit, outputs_equal,
                      run_batch, run_trial, sweep, validate_config,
                      write_report_json, write_trace_csv)
from .reducer import PhaseStructure, emulate, phase_structure, run_bit_model

__version__ = "0.1.0"
