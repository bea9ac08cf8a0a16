"""vitalloc: allocating scarce vital-sign monitors to streaming patients.

Patients arrive over time and follow Gaussian-mixture vital-sign
dynamics; a fixed pool of wireless monitors must be assigned under
minimum- and maximum-wear constraints. The package fits the patient
simulator from trajectory corpora, trains a PPO allocation policy
against it, and benchmarks the policy against heuristic baselines.
"""

from . import baselines, env, gmm, harness, ingest, policy, vitals
from .errors import (
    ContractViolationError,
    DegenerateFitError,
    DegenerateModelError,
    DegenerateRangeError,
    InfeasibleInstanceError,
    InsufficientDataError,
    InvalidInputError,
    NumericFailureError,
    ParseError,
    SchemaError,
    VitallocError,
)
from .streams import child_seed, rng_for

__version__ = "0.1.0"

__all__ = [
    "baselines",
    "env",
    "gmm",
    "harness",
    "ingest",
    "policy",
    "vitals",
    "child_seed",
    "rng_for",
    "VitallocError",
    "InvalidInputError",
    "DegenerateRangeError",
    "ParseError",
    "SchemaError",
    "InsufficientDataError",
    "DegenerateFitError",
    "DegenerateModelError",
    "InfeasibleInstanceError",
    "ContractViolationError",
    "NumericFailureError",
    "__version__",
]
