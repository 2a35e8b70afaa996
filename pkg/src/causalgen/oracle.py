"""Ground-truth counterfactual inference for linear-Gaussian SCMs.

Two independent routes to the same quantity:

* an exact Gaussian belief recursion (mean through the coefficients,
  covariance through ``S' = B S B^T + L L^T``), and
* a brute-force Monte-Carlo simulator of interventional continuations.

Semantics: the factual tail at the intervention time is held fixed (the
intervened variable overridden by the pinned value), future noise is drawn
fresh from the prior, and the intervened variable evolves by its own
mechanism from the pinned value onward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scm import LinearSCMSpec, PathBatch


@dataclass(frozen=True)
class InterventionSpec:
    """Pin ``variable`` to ``value`` at ``time_index`` (a do-intervention)."""

    variable: str
    time_index: int
    value: float


@dataclass(frozen=True)
class CounterfactualQuery:
    """A threshold event on ``target`` some steps after an intervention."""

    intervention: InterventionSpec
    target: str
    threshold: float
    horizon: int = 1
    direction: str = "greater"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.direction not in ("greater", "less"):
            raise ValueError(f"direction must be 'greater' or 'less', got {self.direction!r}")


@dataclass(frozen=True)
class GaussianBelief:
    """Joint Gaussian over all variables at one future time step."""

    variables: tuple[str, ...]
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=np.float64))
        object.__setattr__(self, "variables", tuple(self.variables))

    def check(self, tol: float = 1e-10) -> None:
        if not np.allclose(self.cov, self.cov.T, atol=tol):
            raise ValueError("covariance not symmetric")
        eigenvalues = np.linalg.eigvalsh(self.cov)
        if eigenvalues.min() < -tol:
            raise ValueError(f"covariance not PSD: min eigenvalue {eigenvalues.min()}")

    def marginal(self, variable: str) -> tuple[float, float]:
        i = self.variables.index(variable)
        return float(self.mean[i]), float(self.cov[i, i])


@dataclass(frozen=True)
class CtfEstimate:
    """A counterfactual probability with its sampling error (0 if exact)."""

    probability: float
    std_error: float = 0.0
    n_samples: int = 0
    degenerate: bool = False

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")


def _normal_cdf(z: float) -> float:
    # complementary-error-function form keeps full accuracy in the tails
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def transition_system(spec: LinearSCMSpec) -> tuple[np.ndarray, np.ndarray]:
    """Effective one-step transition ``B`` and noise loading ``L``.

    Lag-0 effects are folded in via ``(I - A0)^{-1}``; for a purely lagged
    graph this reduces to the lag-1 coefficient matrix and the diagonal of
    noise scales.
    """
    spec.validate()
    n = spec.graph.n_variables
    a0 = spec.lag_matrix(0)
    a1 = spec.lag_matrix(1)
    inv = np.linalg.inv(np.eye(n) - a0)
    return inv @ a1, inv @ np.diag(spec.noise_vector())


def ctf_belief_recursion(
    spec: LinearSCMSpec,
    factual_tail: dict[str, float],
    intervention: InterventionSpec,
    horizon: int,
) -> list[GaussianBelief]:
    """Exact beliefs at 1..horizon steps after pinning the intervened value.

    The belief at the intervention time is degenerate: mean equal to the
    factual tail with the intervened variable overridden, zero covariance.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    names = spec.graph.variables
    missing = [v for v in names if v not in factual_tail]
    if missing:
        raise ValueError(f"factual tail missing values for {missing}")
    if intervention.variable not in names:
        raise ValueError(f"unknown intervention variable {intervention.variable!r}")

    b, load = transition_system(spec)
    noise_cov = load @ load.T

    mean = np.array([factual_tail[v] for v in names])
    mean[names.index(intervention.variable)] = intervention.value
    cov = np.zeros((len(names), len(names)))

    beliefs = []
    for _ in range(horizon):
        mean = b @ mean
        cov = b @ cov @ b.T + noise_cov
        belief = GaussianBelief(names, mean.copy(), cov.copy())
        belief.check()
        beliefs.append(belief)
    return beliefs


def ctf_probability_analytical(
    beliefs: list[GaussianBelief], query: CounterfactualQuery
) -> CtfEstimate:
    """Tail probability of the query event under the exact belief."""
    if query.horizon > len(beliefs):
        raise ValueError(f"horizon {query.horizon} beyond belief list ({len(beliefs)})")
    belief = beliefs[query.horizon - 1]
    mean, var = belief.marginal(query.target)
    tau = query.threshold
    if var <= 0.0:
        if tau == mean:
            return CtfEstimate(0.5, degenerate=True)
        above = 1.0 if mean > tau else 0.0
        return CtfEstimate(above if query.direction == "greater" else 1.0 - above)
    p_greater = 1.0 - _normal_cdf((tau - mean) / math.sqrt(var))
    p = p_greater if query.direction == "greater" else 1.0 - p_greater
    return CtfEstimate(min(max(p, 0.0), 1.0))


def ctf_probability_mc(
    spec: LinearSCMSpec,
    factual: PathBatch,
    query: CounterfactualQuery,
    n: int,
    seed: int,
) -> CtfEstimate:
    """Brute-force oracle: simulate interventional continuations.

    ``factual`` must hold a single sequence whose last index equals the
    intervention time; future noise is fresh, the tail is held fixed with
    the intervened variable overridden.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    spec.validate()
    names = spec.graph.variables
    if factual.variables != names:
        raise ValueError(f"factual variables {factual.variables} != spec variables {names}")
    if factual.n_sequences != 1:
        raise ValueError("factual batch must hold exactly one sequence")
    if query.intervention.time_index != factual.length - 1:
        raise ValueError(
            f"intervention at index {query.intervention.time_index} must sit at the "
            f"last factual index {factual.length - 1}"
        )

    tail = factual.values[0, -1, :].copy()
    tail[names.index(query.intervention.variable)] = query.intervention.value

    # evaluate mechanisms directly (independent of the matrix recursion)
    from . import graph as graph_mod
    from .scm import _mechanism_step

    order = graph_mod.topological_order(spec.graph)
    sigma = {v: spec.noise_scale[v] for v in names}
    rng = np.random.default_rng((int(seed),))
    prev = {v: np.full(n, tail[j]) for j, v in enumerate(names)}
    outcome = None
    for _ in range(query.horizon):
        eps = rng.standard_normal((n, len(names)))
        scaled = {v: sigma[v] * eps[:, j] for j, v in enumerate(names)}
        current: dict[str, np.ndarray] = {}
        _mechanism_step(spec, order, prev, current, scaled)
        prev = current
        outcome = current[query.target]

    if query.direction == "greater":
        hits = outcome > query.threshold
    else:
        hits = outcome < query.threshold
    p = float(hits.mean())
    return CtfEstimate(p, std_error=math.sqrt(p * (1.0 - p) / n), n_samples=n)
