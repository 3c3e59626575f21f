"""Persistency-of-excitation certificates and stability probes for time-varying systems."""

from .errors import ConfigError, ContractError, DomainError, EvaluationError, PelabError
from .signal_model import (
    QuadratureSpec,
    StateFunction,
    TimeSignal,
    min_eigenvalue,
    named_signal,
    named_state_function,
    window_gram,
    window_integral_norm,
)
from .ode_sim import OdeSystem, Trajectory, integrate, integrate_many, richardson_check, sample
from .pe_engine import (
    AnnulusGrid,
    CertificateMap,
    Counterexample,
    PECertificate,
    certificate_map,
    classical_pe_certificate,
    filtered_pe_check,
    mornar_scalar_pe,
    pointwise_pe_scan,
    power_certificate,
    udpe_certificate,
)

__version__ = "0.1.0"
