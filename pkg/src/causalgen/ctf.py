"""Counterfactual generation: abduction, action, prediction.

Abduction encodes the observed history and samples per-step latents from
the posterior; unobserved future steps draw latents from the learned
per-step flow priors.  Action pins the intervened value inside the
decoder; prediction is the free-running constrained decode.  Threshold
probabilities are empirical frequencies over the sampled counterfactual
paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Checkpoint, LatentPosterior, reparameterize
from .oracle import CtfEstimate, InterventionSpec
from .scm import PathBatch


@dataclass(frozen=True)
class CtfRequest:
    """One counterfactual sampling job against a trained checkpoint."""

    checkpoint: Checkpoint
    factual: PathBatch
    intervention: InterventionSpec | None
    horizon: int
    n_samples: int = 4096
    seed: int = 0

    def validate(self) -> None:
        config = self.checkpoint.config
        if self.factual.n_sequences != 1:
            raise ValueError("factual batch must hold exactly one sequence")
        if self.factual.variables != config.graph.variables:
            raise ValueError(
                f"factual variables {self.factual.variables} != model variables "
                f"{config.graph.variables}"
            )
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.factual.length + self.horizon > config.sequence_length:
            raise ValueError(
                f"factual length {self.factual.length} + horizon {self.horizon} "
                f"exceeds the trained window {config.sequence_length}"
            )
        if self.intervention is not None:
            if self.intervention.variable not in config.graph.variables:
                raise ValueError(
                    f"unknown intervention variable {self.intervention.variable!r}"
                )
            if self.intervention.time_index != self.factual.length - 1:
                raise ValueError(
                    f"intervention at index {self.intervention.time_index} must sit at "
                    f"the last factual index {self.factual.length - 1}"
                )


def _sampled_latents(request: CtfRequest) -> dict[str, np.ndarray]:
    """Posterior samples over the observed window, prior samples beyond it.

    One seeded generator drives everything in a fixed variable/time order,
    so a request is a pure function of its fields.
    """
    model = request.checkpoint.model()
    config = model.config
    t_obs = request.factual.length
    n = request.n_samples
    d = config.latent_dim

    posterior = model.encode(request.factual)
    tiled = LatentPosterior(
        posterior.variables,
        {v: np.broadcast_to(m, (n,) + m.shape[1:]) for v, m in posterior.means.items()},
        {v: np.broadcast_to(lv, (n,) + lv.shape[1:]) for v, lv in posterior.log_vars.items()},
    )
    rng = np.random.default_rng((int(request.seed), 0))
    noise = {v: rng.standard_normal((n, t_obs, d)) for v in config.graph.variables}
    history = reparameterize(tiled, noise)

    latents = {
        v: np.empty((n, t_obs + request.horizon, d)) for v in config.graph.variables
    }
    for v in config.graph.variables:
        latents[v][:, :t_obs, :] = history[v]
    for t in range(t_obs, t_obs + request.horizon):
        previous = {v: latents[v][:, t - 1, :] for v in config.graph.variables}
        step = model.sample_prior(t, n, rng, previous)
        for v in config.graph.variables:
            latents[v][:, t, :] = step[v]
    return latents


def counterfactual_paths(request: CtfRequest) -> PathBatch:
    """Sampled counterfactual sequences, ``[n_samples, length + horizon, V]``."""
    request.validate()
    model = request.checkpoint.model()
    latents = _sampled_latents(request)
    interventions = () if request.intervention is None else (request.intervention,)
    values = model.decode(latents, interventions)
    return PathBatch(model.config.graph.variables, values)


def reconstruction_paths(request: CtfRequest) -> PathBatch:
    """The same sampling pipeline with no intervention pinned."""
    request.validate()
    model = request.checkpoint.model()
    latents = _sampled_latents(request)
    values = model.decode(latents, ())
    return PathBatch(model.config.graph.variables, values)


def threshold_probability(
    paths: PathBatch, target: str, time_index: int, threshold: float, direction: str
) -> CtfEstimate:
    """Empirical frequency of the threshold event with binomial std error."""
    if direction not in ("greater", "less"):
        raise ValueError(f"direction must be 'greater' or 'less', got {direction!r}")
    outcomes = paths.values[:, time_index, paths.variables.index(target)]
    hits = outcomes > threshold if direction == "greater" else outcomes < threshold
    n = outcomes.shape[0]
    p = float(hits.mean())
    return CtfEstimate(p, std_error=math.sqrt(p * (1.0 - p) / n), n_samples=n)


def ctf_probability(
    request: CtfRequest,
    threshold: float,
    target: str,
    step: int,
    direction: str = "greater",
) -> CtfEstimate:
    """Probability that ``target`` crosses ``threshold`` ``step`` steps after
    the intervention."""
    if step < 1 or step > request.horizon:
        raise ValueError(f"step {step} outside 1..{request.horizon}")
    paths = counterfactual_paths(request)
    t_int = request.factual.length - 1
    return threshold_probability(paths, target, t_int + step, threshold, direction)
