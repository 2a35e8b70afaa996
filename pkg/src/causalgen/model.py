"""DAG-constrained variational autoencoder for multivariate time series.

Per-variable encoders (feedforward features + GRU) produce Gaussian
posteriors over per-step latents; a recursive decoder regenerates each
variable from its own latent, its lagged parent values, and the previous
step's latents, respecting the causal graph; per-step affine-coupling
flows model a time-dependent latent prior.  Training minimizes a stepwise
L1 path reconstruction cost plus a weighted posterior/prior divergence.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import graph as graph_mod
from .graph import CausalGraph
from .nncore import backend, layers
from .nncore.autodiff import (
    NonFiniteLossError,
    Tensor,
    add,
    concat,
    exp,
    gaussian_log_density,
    mean as tmean,
    mul,
    reshape,
    stack,
    standard_normal_log_density,
    sub,
    transpose,
    tsum,
    value_and_grad,
)
from .nncore.optim import AdamConfig, OptimizerState, adam_step
from .nncore.params import ParamStore
from .oracle import InterventionSpec
from .scm import PathBatch

CHECKPOINT_FORMAT_VERSION = 1


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss; carries the offending epoch."""

    def __init__(self, epoch: int, message: str):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class ModelConfig:
    graph: CausalGraph
    sequence_length: int = 10
    latent_dim: int = 2
    feature_width: int = 32
    gru_width: int = 32
    decoder_width: int = 32
    flow_depth: int = 4
    flow_width: int = 16
    beta: float = 0.05
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 128
    seed: int = 0

    def validate(self) -> None:
        graph_mod.require_valid(self.graph)
        graph_mod.require_max_lag(self.graph, 1)
        if self.sequence_length < 2:
            raise ValueError("sequence_length must be >= 2")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.flow_depth < 1:
            raise ValueError("flow_depth must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        for name in ("feature_width", "gru_width", "decoder_width", "flow_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def adam_config(self) -> AdamConfig:
        return AdamConfig(
            learning_rate=self.learning_rate,
            beta1=self.adam_beta1,
            beta2=self.adam_beta2,
            eps=self.adam_eps,
        )

    def to_dict(self) -> dict:
        payload = {
            "graph": self.graph.to_dict(),
            "sequence_length": self.sequence_length,
            "latent_dim": self.latent_dim,
            "feature_width": self.feature_width,
            "gru_width": self.gru_width,
            "decoder_width": self.decoder_width,
            "flow_depth": self.flow_depth,
            "flow_width": self.flow_width,
            "beta": self.beta,
            "learning_rate": self.learning_rate,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        payload = dict(payload)
        payload["graph"] = CausalGraph.from_dict(payload["graph"])
        return cls(**payload)


@dataclass(frozen=True)
class LatentPosterior:
    """Per-variable Gaussian posterior parameters, each ``[n, T, latent_dim]``."""

    variables: tuple[str, ...]
    means: dict[str, np.ndarray]
    log_vars: dict[str, np.ndarray]

    @property
    def n_sequences(self) -> int:
        return self.means[self.variables[0]].shape[0]

    @property
    def length(self) -> int:
        return self.means[self.variables[0]].shape[1]


def reparameterize(posterior: LatentPosterior, noise: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Elementwise mean + noise * exp(0.5 * log-variance), per variable."""
    out = {}
    for v in posterior.variables:
        eps = np.asarray(noise[v], dtype=np.float64)
        if eps.shape != posterior.means[v].shape:
            raise ValueError(
                f"noise shape {eps.shape} != posterior shape {posterior.means[v].shape} for {v!r}"
            )
        out[v] = posterior.means[v] + eps * np.exp(0.5 * posterior.log_vars[v])
    return out


# -- parameter construction ----------------------------------------------

def _coupling_in_width(latent_dim: int, flip: bool) -> int:
    keep, _ = layers._coupling_split(latent_dim, flip)
    return keep.stop - keep.start


def _flow_predecessors(config: ModelConfig, v: str) -> list[str]:
    """Topologically earlier variables whose same-step latents condition v."""
    order = graph_mod.topological_order(config.graph)
    return order[: order.index(v)]


def _flow_context_width(config: ModelConfig, v: str) -> int:
    n_pred = len(_flow_predecessors(config, v))
    return (config.graph.n_variables + n_pred) * config.latent_dim


def _coupling_out_width(latent_dim: int, flip: bool) -> int:
    _, trans = layers._coupling_split(latent_dim, flip)
    return 2 * (trans.stop - trans.start)


def init_params(config: ModelConfig) -> ParamStore:
    """Seeded fan-in-uniform weights; flow output layers start at identity."""
    config.validate()
    rng = np.random.default_rng((config.seed, 0))
    params = ParamStore()
    g = config.graph
    d = config.latent_dim
    t_len = config.sequence_length

    def dense_pair(prefix: str, rows: int, cols: int, zero: bool = False):
        if zero:
            params.add(f"{prefix}.w", np.zeros((rows, cols)))
        else:
            params.add(f"{prefix}.w", layers.uniform_fan_in(rng, rows, cols))
        params.add(f"{prefix}.b", np.zeros(cols))

    for v in g.variables:
        in_width = 1 + len(graph_mod.parents(g, v))
        dense_pair(f"enc.{v}.feat", in_width, config.feature_width)
        # fused z|r|h input projection, then per-gate recurrent matrices
        dense_pair(f"enc.{v}.in", config.feature_width, 3 * config.gru_width)
        for gate in ("z", "r", "h"):
            params.add(
                f"enc.{v}.rec_{gate}.u",
                layers.uniform_fan_in(rng, config.gru_width, config.gru_width),
            )
        dense_pair(f"enc.{v}.head", config.gru_width, 2 * d)

    for v in g.variables:
        dec_in = d + len(graph_mod.parents(g, v)) + g.n_variables * d
        dense_pair(f"dec.{v}.hidden", dec_in, config.decoder_width)
        dense_pair(f"dec.{v}.out", config.decoder_width, 1)

    # flow couplings are conditioned on the previous step's latents (all
    # variables) plus same-step latents of topologically earlier variables,
    # so the latent prior factorizes like the decoder: Markov across time,
    # DAG-ordered within a step
    for v in g.variables:
        cond_width = _flow_context_width(config, v)
        for i in range(config.flow_depth):
            flip = bool(i % 2)
            in_w = _coupling_in_width(d, flip) + cond_width
            out_w = _coupling_out_width(d, flip)
            bound = float(np.sqrt(1.0 / max(in_w, 1)))
            params.add(
                f"prior.{v}.c{i}.in.w",
                rng.uniform(-bound, bound, size=(t_len, in_w, config.flow_width)),
            )
            params.add(f"prior.{v}.c{i}.in.b", np.zeros((t_len, 1, config.flow_width)))
            params.add(
                f"prior.{v}.c{i}.out.w", np.zeros((t_len, config.flow_width, out_w))
            )
            params.add(f"prior.{v}.c{i}.out.b", np.zeros((t_len, 1, out_w)))
    return params


# -- graph-building internals (operate on Tensors) ------------------------

def _encoder_inputs(config: ModelConfig, values: np.ndarray) -> dict[str, np.ndarray]:
    """Per-variable encoder streams: own values plus lag-shifted parents."""
    g = config.graph
    n, t_len, _ = values.shape
    streams = {}
    for v in g.variables:
        cols = [values[:, :, g.index(v)]]
        for parent, lag in graph_mod.parents(g, v):
            shifted = np.zeros((n, t_len))
            shifted[:, lag:] = values[:, : t_len - lag, g.index(parent)]
            cols.append(shifted)
        streams[v] = np.stack(cols, axis=-1)
    return streams


def _encode_graph(
    pt: dict[str, Tensor], config: ModelConfig, streams: dict[str, np.ndarray]
) -> dict[str, tuple[Tensor, Tensor]]:
    g = config.graph
    d = config.latent_dim
    width = config.gru_width
    out = {}
    for v in g.variables:
        stream = streams[v]
        n, t_len, in_width = stream.shape
        flat = Tensor(stream.reshape(n * t_len, in_width))
        feat = layers.dense(flat, pt[f"enc.{v}.feat.w"], pt[f"enc.{v}.feat.b"], "tanh")
        proj = layers.dense(feat, pt[f"enc.{v}.in.w"], pt[f"enc.{v}.in.b"], "identity")
        ax = reshape(proj, (n, t_len, 3 * width))
        h = Tensor(np.zeros((n, width)))
        states = []
        for t in range(t_len):
            h = layers.gru_core(
                ax[:, t, :],
                h,
                pt[f"enc.{v}.rec_z.u"],
                pt[f"enc.{v}.rec_r.u"],
                pt[f"enc.{v}.rec_h.u"],
            )
            states.append(h)
        stacked = stack(states, axis=1)
        heads = layers.dense(
            reshape(stacked, (n * t_len, width)),
            pt[f"enc.{v}.head.w"],
            pt[f"enc.{v}.head.b"],
            "identity",
        )
        heads = reshape(heads, (n, t_len, 2 * d))
        out[v] = (heads[..., :d], heads[..., d:])
    return out


def _decode_graph(
    pt: dict[str, Tensor],
    config: ModelConfig,
    latents: dict[str, Tensor],
    interventions: tuple[InterventionSpec, ...] = (),
    initial_values: dict[str, float] | None = None,
    teacher_values: np.ndarray | None = None,
) -> Tensor:
    """Recursive generation in topological order; returns ``[n, T, V]``.

    Generation is free-running: each mechanism net consumes previously
    generated lagged parent values.  During training ``teacher_values``
    supplies the observed lagged values instead, which anchors the
    mechanism nets to the data-generating recursion instead of letting
    early-training garbage feed back on itself.

    Pinned values replace the mechanism output before any downstream
    consumer reads them, which gives past/non-descendant invariance by
    construction.
    """
    g = config.graph
    order = graph_mod.topological_order(g)
    n, t_len = latents[g.variables[0]].shape[0], latents[g.variables[0]].shape[1]
    initial_values = initial_values or {}

    pins: dict[tuple[str, int], float] = {}
    for spec in interventions:
        if spec.variable not in g.variables:
            raise ValueError(f"unknown intervention variable {spec.variable!r}")
        if not 0 <= spec.time_index < t_len:
            raise ValueError(
                f"intervention time {spec.time_index} outside decode window [0, {t_len})"
            )
        pins[(spec.variable, spec.time_index)] = spec.value

    parent_lists = {v: graph_mod.parents(g, v) for v in g.variables}
    generated: dict[str, list[Tensor]] = {v: [] for v in g.variables}
    zeros_prev = Tensor(np.zeros((n, g.n_variables * config.latent_dim)))

    def lagged_input(parent: str, t: int, lag: int) -> Tensor:
        if t - lag < 0:
            fill = float(initial_values.get(parent, 0.0))
            return Tensor(np.full((n, 1), fill))
        if teacher_values is not None:
            col = g.index(parent)
            return Tensor(teacher_values[:, t - lag, col : col + 1])
        return generated[parent][t - lag]

    for t in range(t_len):
        if t == 0:
            u_prev = zeros_prev
        else:
            u_prev = concat([latents[v][:, t - 1, :] for v in g.variables], axis=-1)
        for v in order:
            pin = pins.get((v, t))
            if pin is not None:
                generated[v].append(Tensor(np.full((n, 1), pin)))
                continue
            pieces = [latents[v][:, t, :]]
            for parent, lag in parent_lists[v]:
                pieces.append(lagged_input(parent, t, lag))
            pieces.append(u_prev)
            net_in = concat(pieces, axis=-1)
            hidden = layers.dense(
                net_in, pt[f"dec.{v}.hidden.w"], pt[f"dec.{v}.hidden.b"], "tanh"
            )
            value = layers.dense(
                hidden, pt[f"dec.{v}.out.w"], pt[f"dec.{v}.out.b"], "identity"
            )
            generated[v].append(value)

    per_variable = [concat(generated[v], axis=1) for v in g.variables]
    return stack(per_variable, axis=2)


def _coupling_params_at(pt: dict[str, Tensor], v: str, i: int, t: int | None):
    """Flow coupling weights; sliced to one time step when ``t`` is given."""
    names = [f"prior.{v}.c{i}.in.w", f"prior.{v}.c{i}.in.b",
             f"prior.{v}.c{i}.out.w", f"prior.{v}.c{i}.out.b"]
    tensors = [pt[name] for name in names]
    if t is None:
        return tensors
    return [tensor[t] for tensor in tensors]


def _lagged_latent_context(
    config: ModelConfig, latents: dict[str, Tensor]
) -> Tensor:
    """Previous-step latents of all variables as ``[T, n, V*d]`` (zeros at t=0)."""
    joint = concat([latents[v] for v in config.graph.variables], axis=-1)  # [n, T, V*d]
    n = joint.shape[0]
    zeros_first = Tensor(np.zeros((n, 1, joint.shape[2])))
    shifted = concat([zeros_first, joint[:, :-1, :]], axis=1)
    return transpose(shifted, (1, 0, 2))


def _flow_context(
    config: ModelConfig, v: str, lagged: Tensor, latents: dict[str, Tensor]
) -> Tensor:
    """Conditioning input for v's flows: lagged latents + same-step predecessors."""
    pieces = [lagged]
    for p in _flow_predecessors(config, v):
        pieces.append(transpose(latents[p], (1, 0, 2)))
    return concat(pieces, axis=-1) if len(pieces) > 1 else lagged


def _prior_log_density_graph(
    pt: dict[str, Tensor], config: ModelConfig, v: str, u: Tensor, context: Tensor
) -> Tensor:
    """Log density of ``u`` ([n, T, d]) under the per-step conditional flows -> [n]."""
    z = transpose(u, (1, 0, 2))  # [T, n, d]
    log_det_sum = None
    for i in reversed(range(config.flow_depth)):
        w1, b1, w2, b2 = _coupling_params_at(pt, v, i, None)
        z, log_det = layers.coupling_inverse(
            z, context, w1, b1, w2, b2, flip=bool(i % 2)
        )
        log_det_sum = log_det if log_det_sum is None else add(log_det_sum, log_det)
    log_p = add(standard_normal_log_density(z), log_det_sum)  # [T, n]
    return tsum(log_p, axis=0)


def _elbo_graph(
    pt: dict[str, Tensor],
    config: ModelConfig,
    values: np.ndarray,
    eps: dict[str, np.ndarray],
    beta: float,
) -> tuple[Tensor, Tensor, Tensor]:
    g = config.graph
    streams = _encoder_inputs(config, values)
    posterior = _encode_graph(pt, config, streams)

    latents: dict[str, Tensor] = {}
    for v in g.variables:
        mu, log_var = posterior[v]
        latents[v] = add(mu, mul(Tensor(eps[v]), exp(mul(log_var, 0.5))))

    lagged = _lagged_latent_context(config, latents)
    kl_per_seq = None
    for v in g.variables:
        mu, log_var = posterior[v]
        u = latents[v]
        log_q = tsum(gaussian_log_density(u, mu, log_var), axis=1)  # [n]
        context = _flow_context(config, v, lagged, latents)
        log_p = _prior_log_density_graph(pt, config, v, u, context)  # [n]
        gap = sub(log_q, log_p)
        kl_per_seq = gap if kl_per_seq is None else add(kl_per_seq, gap)

    x_hat = _decode_graph(pt, config, latents, teacher_values=values)
    recon_per_seq = layers.l1_path_cost(Tensor(values), x_hat)

    recon = tmean(recon_per_seq)
    kl = tmean(kl_per_seq)
    total = add(recon, mul(kl, float(beta)))
    return total, recon, kl


def _as_tensors(params: ParamStore) -> dict[str, Tensor]:
    return {name: Tensor(arr) for name, arr in params.items()}


# -- public model surface --------------------------------------------------

class CausalVae:
    """A (config, parameters) pair exposing encode/decode/ELBO operations.

    Inference methods are pure and safe to share; parameters are only
    mutated by the training loop.
    """

    def __init__(self, config: ModelConfig, params: ParamStore):
        config.validate()
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig) -> "CausalVae":
        return cls(config, init_params(config))

    # -- inference ---------------------------------------------------------
    def _batch_values(self, batch) -> np.ndarray:
        if isinstance(batch, PathBatch):
            if batch.variables != self.config.graph.variables:
                raise ValueError(
                    f"batch variables {batch.variables} != graph variables "
                    f"{self.config.graph.variables}"
                )
            values = batch.values
        else:
            values = np.asarray(batch, dtype=np.float64)
        if values.ndim != 3 or values.shape[2] != self.config.graph.n_variables:
            raise ValueError(f"expected [n, T, {self.config.graph.n_variables}] values")
        if values.shape[1] > self.config.sequence_length:
            raise ValueError(
                f"sequence length {values.shape[1]} exceeds model window "
                f"{self.config.sequence_length}"
            )
        return values

    def encode(self, batch) -> LatentPosterior:
        values = self._batch_values(batch)
        pt = _as_tensors(self.params)
        posterior = _encode_graph(pt, self.config, _encoder_inputs(self.config, values))
        means = {v: mu.data for v, (mu, _) in posterior.items()}
        log_vars = {v: lv.data for v, (_, lv) in posterior.items()}
        return LatentPosterior(self.config.graph.variables, means, log_vars)

    def decode(
        self,
        latents: dict[str, np.ndarray],
        interventions: tuple[InterventionSpec, ...] | list = (),
        initial_values: dict[str, float] | None = None,
    ) -> np.ndarray:
        pt = _as_tensors(self.params)
        tensor_latents = {v: Tensor(np.asarray(latents[v], dtype=np.float64))
                          for v in self.config.graph.variables}
        lengths = {tensor_latents[v].shape[1] for v in self.config.graph.variables}
        if len(lengths) != 1:
            raise ValueError("latent lengths differ across variables")
        out = _decode_graph(pt, self.config, tensor_latents, tuple(interventions),
                            initial_values)
        return out.data

    def _context_at(
        self, latents: dict[str, np.ndarray] | None, t: int, n: int
    ) -> Tensor:
        """Previous-step latents (all variables) as the flow conditioning input."""
        g = self.config.graph
        width = g.n_variables * self.config.latent_dim
        if t == 0 or latents is None:
            return Tensor(np.zeros((n, width)))
        cols = [np.asarray(latents[v], dtype=np.float64)[:, t - 1, :] for v in g.variables]
        return Tensor(np.concatenate(cols, axis=-1))

    def prior_log_density(self, latents: dict[str, np.ndarray], t: int) -> np.ndarray:
        """Summed per-variable conditional flow log density at step ``t`` -> [n].

        ``latents`` holds per-variable latent paths ``[n, T', d]``; the
        density at ``t`` conditions on all latents at ``t - 1`` (zeros when
        ``t`` is 0) and, per variable, on same-step latents of
        topologically earlier variables.
        """
        if not 0 <= t < self.config.sequence_length:
            raise ValueError(f"time index {t} outside [0, {self.config.sequence_length})")
        pt = _as_tensors(self.params)
        n = np.asarray(latents[self.config.graph.variables[0]]).shape[0]
        lagged = self._context_at(latents, t, n)
        total = None
        for v in self.config.graph.variables:
            pieces = [lagged.data] + [
                np.asarray(latents[p], dtype=np.float64)[:, t, :]
                for p in _flow_predecessors(self.config, v)
            ]
            context = Tensor(np.concatenate(pieces, axis=-1))
            z = Tensor(np.asarray(latents[v], dtype=np.float64)[:, t, :])
            log_det_sum = None
            for i in reversed(range(self.config.flow_depth)):
                w1, b1, w2, b2 = _coupling_params_at(pt, v, i, t)
                z, log_det = layers.coupling_inverse(
                    z, context, w1, b1, w2, b2, flip=bool(i % 2)
                )
                log_det_sum = log_det if log_det_sum is None else add(log_det_sum, log_det)
            log_p = add(standard_normal_log_density(z), log_det_sum)
            total = log_p.data if total is None else total + log_p.data
        return total

    def sample_prior(
        self,
        t: int,
        n: int,
        rng: np.random.Generator,
        previous: dict[str, np.ndarray] | None = None,
    ) -> dict[str, np.ndarray]:
        """Draw step-``t`` latents from the flow prior given the previous step.

        ``previous`` maps variables to ``[n, d]`` latents at ``t - 1``; omit
        it at ``t == 0`` (the conditioning is zeros there).  Variables are
        sampled in topological order so each sees its same-step
        predecessors.
        """
        if not 0 <= t < self.config.sequence_length:
            raise ValueError(f"time index {t} outside [0, {self.config.sequence_length})")
        g = self.config.graph
        pt = _as_tensors(self.params)
        if t > 0 and previous is None:
            raise ValueError("previous-step latents are required for t > 0")
        if previous is None:
            lagged = np.zeros((n, g.n_variables * self.config.latent_dim))
        else:
            lagged = np.concatenate(
                [np.asarray(previous[v], dtype=np.float64) for v in g.variables], axis=-1
            )
        out: dict[str, np.ndarray] = {}
        for v in graph_mod.topological_order(g):
            pieces = [lagged] + [out[p] for p in _flow_predecessors(self.config, v)]
            context = Tensor(np.concatenate(pieces, axis=-1))
            z = Tensor(rng.standard_normal((n, self.config.latent_dim)))
            for i in range(self.config.flow_depth):
                w1, b1, w2, b2 = _coupling_params_at(pt, v, i, t)
                z, _ = layers.coupling_forward(
                    z, context, w1, b1, w2, b2, flip=bool(i % 2)
                )
            out[v] = z.data
        return out

    def elbo_loss(
        self, batch, noise: dict[str, np.ndarray], beta: float | None = None
    ) -> tuple[float, float, float]:
        """(total, reconstruction, kl) for a batch under frozen noise."""
        values = self._batch_values(batch)
        beta = self.config.beta if beta is None else beta
        total, recon, kl = _elbo_graph(
            _as_tensors(self.params), self.config, values, noise, beta
        )
        return float(total.data), float(recon.data), float(kl.data)

    def to_checkpoint(self, metadata: dict | None = None) -> "Checkpoint":
        return Checkpoint(self.config, self.params, metadata=metadata or {})


# -- training ---------------------------------------------------------------

@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def final(self) -> dict:
        return self.epochs[-1] if self.epochs else {}


def train(
    config: ModelConfig, data: PathBatch, progress=None
) -> tuple["Checkpoint", TrainReport]:
    """Mini-batch Adam over the ELBO; deterministic given ``config.seed``."""
    config.validate()
    if data.variables != config.graph.variables:
        raise ValueError("data variables do not match the model graph")
    if data.length != config.sequence_length:
        raise ValueError(
            f"data length {data.length} != configured window {config.sequence_length}"
        )
    values = data.values
    params = init_params(config)
    state = OptimizerState.initialize(params, config.adam_config())
    rng = np.random.default_rng((config.seed, 1))

    report = TrainReport()
    start = time.perf_counter()
    with backend.single_thread_blas():
        _train_epochs(config, values, params, state, rng, report, progress)
    report.wall_time_s = time.perf_counter() - start

    checkpoint = Checkpoint(
        config,
        params,
        metadata={"epochs": config.epochs, "final_loss": report.final["total"]},
    )
    return checkpoint, report


def _train_epochs(config, values, params, state, rng, report, progress):
    n = values.shape[0]
    d = config.latent_dim
    t_len = config.sequence_length
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        totals = np.zeros(3)
        seen = 0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            batch_values = values[idx]
            eps = {
                v: rng.standard_normal((len(idx), t_len, d))
                for v in config.graph.variables
            }

            def loss_fn(pt):
                total, recon, kl = _elbo_graph(pt, config, batch_values, eps, config.beta)
                return total, (float(recon.data), float(kl.data))

            try:
                total_value, aux, grads = value_and_grad(loss_fn, params)
            except NonFiniteLossError as exc:
                raise DivergenceError(epoch, str(exc)) from exc
            try:
                params, state = adam_step(state, params, grads)
            except ValueError as exc:
                raise DivergenceError(epoch, str(exc)) from exc
            totals += len(idx) * np.array([total_value, aux[0], aux[1]])
            seen += len(idx)
        epoch_stats = {
            "epoch": epoch,
            "total": totals[0] / seen,
            "reconstruction": totals[1] / seen,
            "kl": totals[2] / seen,
        }
        report.epochs.append(epoch_stats)
        if progress is not None:
            progress(epoch_stats)


# -- checkpoint container ----------------------------------------------------

@dataclass
class Checkpoint:
    """Config + parameters, serialized as a JSON header plus raw float64."""

    config: ModelConfig
    params: ParamStore
    format_version: int = CHECKPOINT_FORMAT_VERSION
    metadata: dict = field(default_factory=dict)

    def model(self) -> CausalVae:
        return CausalVae(self.config, self.params)

    def to_bytes(self) -> bytes:
        header = {
            "format_version": self.format_version,
            "config": self.config.to_dict(),
            "manifest": [[name, list(arr.shape)] for name, arr in self.params.items()],
            "metadata": self.metadata,
        }
        blob = json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n"
        for _, arr in self.params.items():
            blob += arr.astype("<f8").tobytes(order="C")
        return blob

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        newline = blob.index(b"\n")
        header = json.loads(blob[:newline].decode("utf-8"))
        if header["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['format_version']}")
        config = ModelConfig.from_dict(header["config"])
        params = ParamStore()
        offset = newline + 1
        for name, shape in header["manifest"]:
            size = int(np.prod(shape)) if shape else 1
            raw = blob[offset : offset + 8 * size]
            if len(raw) != 8 * size:
                raise ValueError(f"checkpoint truncated at parameter {name!r}")
            params.add(name, np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
            offset += 8 * size
        if offset != len(blob):
            raise ValueError("trailing bytes after final parameter")
        return cls(config, params, header["format_version"], header["metadata"])

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
