"""Energy ledger, moment-interpolation verifier, weak-form probes and flocking metrics."""

from .flocking import FlockingMetrics, flocking_metrics
from .ledger import DELTA_TERMS, EPS_TERMS, LEDGER_COLUMNS, EnergyLedger, LedgerContext, fit_tolerance, rate_terms, replay_ledger, state_terms
from .lemma import LemmaResult, critical_exponent, lemma_moment_bound
from .weakform import Bump, KineticTest, make_test_bank, time_weights, weakform_residual

__all__ = [
    "DELTA_TERMS",
    "EPS_TERMS",
    "LEDGER_COLUMNS",
    "Bump",
    "EnergyLedger",
    "FlockingMetrics",
    "KineticTest",
    "LedgerContext",
    "LemmaResult",
    "critical_exponent",
    "fit_tolerance",
    "flocking_metrics",
    "lemma_moment_bound",
    "make_test_bank",
    "rate_terms",
    "replay_ledger",
    "state_terms",
    "time_weights",
    "weakform_residual",
]
