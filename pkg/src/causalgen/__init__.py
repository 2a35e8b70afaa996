"""Causal market simulator toolkit.

Builds DAG-constrained variational autoencoders over linear-Gaussian
autoregressive market data, answers counterfactual threshold queries by
abduction/action/prediction, and validates the answers against an exact
Gaussian oracle.  See the ``causalgen`` CLI for the end-to-end workflows.
"""

__version__ = "0.1.0"

from .graph import CausalGraph
from .model import CausalVae, Checkpoint, ModelConfig
from .oracle import CounterfactualQuery, CtfEstimate, InterventionSpec
from .scm import LinearSCMSpec, NoiseBatch, PathBatch

__all__ = [
    "CausalGraph",
    "CausalVae",
    "Checkpoint",
    "CounterfactualQuery",
    "CtfEstimate",
    "InterventionSpec",
    "LinearSCMSpec",
    "ModelConfig",
    "NoiseBatch",
    "PathBatch",
    "__version__",
]
