"""Two-party distribution testing: protocols, cost accounting, hard instances."""

from .closeness import (
    CTParams,
    SecureCTParams,
    ct2p_insecure,
    ct2p_secure_reference,
    distinguish,
    threshold_tau,
)
from .harness import ConfigError, Decision, Transcript, Verdict
from .independence import ITParams, it2p, one_way_it2p

__all__ = [
    "CTParams",
    "ConfigError",
    "Decision",
    "ITParams",
    "SecureCTParams",
    "Transcript",
    "Verdict",
    "ct2p_insecure",
    "ct2p_secure_reference",
    "distinguish",
    "it2p",
    "one_way_it2p",
    "threshold_tau",
]
