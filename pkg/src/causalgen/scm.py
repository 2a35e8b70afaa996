"""Linear-Gaussian time-series SCMs: simulation and exact noise abduction.

Each variable follows a linear mechanism of its lagged (and optionally
contemporaneous) parents plus independent scaled standard-normal noise:

    value(v, t) = sum_k coeff_k * value(parent_k, t - lag_k)
                  + noise_scale(v) * noise(v, t)

Time index 0 of a window is treated as an initial condition; mechanisms
apply from t = 1 on.  Abduction inverts the mechanism algebraically, so
simulate -> abduct -> re-simulate is exact up to floating-point rounding.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import graph as graph_mod
from .graph import CausalGraph


@dataclass(frozen=True)
class BurnIn:
    """Discard ``steps`` leading samples so retained data is stationary."""

    steps: int = 100


@dataclass(frozen=True)
class FixedInit:
    """Start every sequence from the given per-variable values."""

    values: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class StationaryInit:
    """Draw the initial state from the exact stationary distribution."""


InitPolicy = BurnIn | FixedInit | StationaryInit


@dataclass(frozen=True)
class PathBatch:
    """A batch of multivariate paths, shape ``[n_sequences, T, n_variables]``.

    Column order follows ``variables``; all entries are finite float64.
    """

    variables: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "variables", tuple(self.variables))
        if values.ndim != 3:
            raise ValueError(f"expected 3-d values, got shape {values.shape}")
        n, t, v = values.shape
        if n < 1 or t < 1:
            raise ValueError(f"need at least one sequence and one step, got {values.shape}")
        if v != len(self.variables):
            raise ValueError(
                f"{len(self.variables)} variables but values have {v} columns"
            )
        if not np.isfinite(values).all():
            raise ValueError("non-finite entries in path batch")

    @property
    def n_sequences(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def column(self, variable: str) -> np.ndarray:
        return self.values[:, :, self.variables.index(variable)]

    def sequence(self, index: int) -> "PathBatch":
        return PathBatch(self.variables, self.values[index : index + 1])


@dataclass(frozen=True)
class NoiseBatch:
    """Standard-normal draws (pre-scaling), same layout as :class:`PathBatch`."""

    variables: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "variables", tuple(self.variables))
        if values.ndim != 3:
            raise ValueError(f"expected 3-d noise, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("non-finite entries in noise batch")


@dataclass(frozen=True)
class LinearSCMSpec:
    """Mechanism coefficients and noise scales over a causal graph.

    ``coefficients`` maps ``(target, parent, lag)`` to the mechanism weight;
    every key must correspond to a graph edge.  ``noise_scale`` must be
    strictly positive for every variable.
    """

    graph: CausalGraph
    coefficients: dict[tuple[str, str, int], float]
    noise_scale: dict[str, float]
    init: InitPolicy = BurnIn()

    def validate(self) -> None:
        graph_mod.require_valid(self.graph)
        graph_mod.require_max_lag(self.graph, 1)
        # coefficient keys are (target, parent, lag); edges are (source, target, lag)
        edge_set = {(t, s, lag) for s, t, lag in self.graph.edges}
        for key in self.coefficients:
            if key not in edge_set:
                raise ValueError(f"coefficient key {key} has no matching edge")
        for v in self.graph.variables:
            scale = self.noise_scale.get(v)
            if scale is None:
                raise ValueError(f"missing noise scale for {v!r}")
            if not scale > 0:
                raise ValueError(f"noise scale for {v!r} must be positive, got {scale}")
        if isinstance(self.init, StationaryInit):
            for v in self.graph.variables:
                a = self.coefficients.get((v, v, 1), 0.0)
                if not abs(a) < 1.0:
                    raise ValueError(
                        f"stationary init needs |self-lag coefficient| < 1 for {v!r}"
                    )

    def coefficient(self, target: str, parent: str, lag: int) -> float:
        return self.coefficients.get((target, parent, lag), 0.0)

    def lag_matrix(self, lag: int) -> np.ndarray:
        """Coefficient matrix ``A`` with ``A[i, j]`` weighting parent j -> target i."""
        names = self.graph.variables
        a = np.zeros((len(names), len(names)))
        for (target, parent, edge_lag), coeff in self.coefficients.items():
            if edge_lag == lag:
                a[names.index(target), names.index(parent)] = coeff
        return a

    def noise_vector(self) -> np.ndarray:
        return np.array([self.noise_scale[v] for v in self.graph.variables])

    def to_dict(self) -> dict:
        init: dict
        if isinstance(self.init, BurnIn):
            init = {"kind": "burnin", "steps": self.init.steps}
        elif isinstance(self.init, FixedInit):
            init = {"kind": "fixed", "values": dict(self.init.values)}
        else:
            init = {"kind": "stationary"}
        return {
            "graph": self.graph.to_dict(),
            "coefficients": [[t, p, lag, c] for (t, p, lag), c in self.coefficients.items()],
            "noise_scale": dict(self.noise_scale),
            "init": init,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "LinearSCMSpec":
        init_payload = payload.get("init", {"kind": "burnin", "steps": 100})
        kind = init_payload["kind"]
        if kind == "burnin":
            init: InitPolicy = BurnIn(int(init_payload.get("steps", 100)))
        elif kind == "fixed":
            init = FixedInit(dict(init_payload.get("values", {})))
        elif kind == "stationary":
            init = StationaryInit()
        else:
            raise ValueError(f"unknown init kind {kind!r}")
        return cls(
            graph=CausalGraph.from_dict(payload["graph"]),
            coefficients={(t, p, int(lag)): float(c) for t, p, lag, c in payload["coefficients"]},
            noise_scale={k: float(v) for k, v in payload["noise_scale"].items()},
            init=init,
        )


def mean_reverting_pair_spec(init: InitPolicy = BurnIn()) -> LinearSCMSpec:
    """The bundled two-asset AR spec: a mean-reverting driver X feeding Y."""
    return LinearSCMSpec(
        graph=graph_mod.mean_reverting_pair(),
        coefficients={("X", "X", 1): 0.8, ("Y", "Y", 1): 0.7, ("Y", "X", 1): 0.5},
        noise_scale={"X": 0.5, "Y": 0.6},
        init=init,
    )


def _mechanism_step(
    spec: LinearSCMSpec,
    order: list[str],
    prev: dict[str, np.ndarray],
    current: dict[str, np.ndarray],
    scaled_noise: dict[str, np.ndarray],
) -> None:
    """Fill ``current`` in topological order from lagged and same-step parents."""
    for v in order:
        total = scaled_noise[v].copy()
        for parent, lag in graph_mod.parents(spec.graph, v):
            coeff = spec.coefficient(v, parent, lag)
            if coeff == 0.0:
                continue
            source = prev[parent] if lag == 1 else current[parent]
            total += coeff * source
        current[v] = total


def simulate_with_noise(
    spec: LinearSCMSpec,
    noise: NoiseBatch,
    init_values: dict[str, float] | np.ndarray | None = None,
) -> PathBatch:
    """Deterministically evaluate mechanisms over a given noise batch.

    ``init_values`` seeds time index 0 (defaults to zeros); noise at index 0
    is ignored because that slot is an initial condition, not a mechanism
    output.  ``init_values`` may also be an ``[n, V]`` array giving each
    sequence its own start.
    """
    spec.validate()
    names = spec.graph.variables
    if noise.variables != names:
        raise ValueError(f"noise variables {noise.variables} != spec variables {names}")
    n, t_len, _ = noise.values.shape
    order = graph_mod.topological_order(spec.graph)

    values = np.zeros((n, t_len, len(names)))
    if init_values is not None:
        if isinstance(init_values, dict):
            for v, x in init_values.items():
                values[:, 0, names.index(v)] = x
        else:
            init_arr = np.asarray(init_values, dtype=np.float64)
            values[:, 0, :] = init_arr
    sigma = spec.noise_vector()

    for t in range(1, t_len):
        prev = {v: values[:, t - 1, names.index(v)] for v in names}
        current: dict[str, np.ndarray] = {}
        scaled = {
            v: sigma[names.index(v)] * noise.values[:, t, names.index(v)] for v in names
        }
        _mechanism_step(spec, order, prev, current, scaled)
        for v in names:
            values[:, t, names.index(v)] = current[v]
    return PathBatch(names, values)


def _sequence_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-style generator derivation: sequence index mixed into the seed."""
    return np.random.default_rng((int(seed), int(index)))


def draw_noise(spec: LinearSCMSpec, n: int, t_len: int, seed: int) -> NoiseBatch:
    """Per-sequence seeded standard-normal noise, shape ``[n, t_len, V]``."""
    names = spec.graph.variables
    values = np.empty((n, t_len, len(names)))
    for i in range(n):
        values[i] = _sequence_rng(seed, i).standard_normal((t_len, len(names)))
    return NoiseBatch(names, values)


def stationary_covariance(spec: LinearSCMSpec) -> np.ndarray:
    """Solve ``S = B S B^T + L L^T`` for the stationary covariance.

    ``B`` folds lag-0 effects into the lag-1 transition via
    ``(I - A0)^{-1}``; see :mod:`causalgen.oracle` for the same construction.
    """
    import scipy.linalg

    a0 = spec.lag_matrix(0)
    a1 = spec.lag_matrix(1)
    inv = np.linalg.inv(np.eye(len(spec.graph.variables)) - a0)
    b = inv @ a1
    load = inv @ np.diag(spec.noise_vector())
    return scipy.linalg.solve_discrete_lyapunov(b, load @ load.T)


def simulate(spec: LinearSCMSpec, n: int, t_len: int, seed: int) -> PathBatch:
    """Draw seeded noise, apply the init policy, and evaluate mechanisms.

    Pure function of ``(spec, n, t_len, seed)``; sequences use derived
    per-sequence seeds so generation order does not matter.
    """
    if n < 1 or t_len < 1:
        raise ValueError("n and t_len must be >= 1")
    spec.validate()
    names = spec.graph.variables

    if isinstance(spec.init, BurnIn):
        total = spec.init.steps + t_len
        noise = draw_noise(spec, n, total, seed)
        paths = simulate_with_noise(spec, noise, None)
        return PathBatch(names, paths.values[:, spec.init.steps :, :].copy())
    if isinstance(spec.init, FixedInit):
        noise = draw_noise(spec, n, t_len, seed)
        return simulate_with_noise(spec, noise, dict(spec.init.values))
    # stationary: exact Gaussian start, then mechanisms forward
    cov = stationary_covariance(spec)
    chol = np.linalg.cholesky(cov + 1e-15 * np.eye(len(names)))
    noise = draw_noise(spec, n, t_len + 1, seed)
    init = noise.values[:, 0, :] @ chol.T
    trimmed = NoiseBatch(names, noise.values[:, 1:, :])
    return simulate_with_noise(spec, trimmed, init)


def abduct_noise(spec: LinearSCMSpec, paths: PathBatch) -> NoiseBatch:
    """Invert mechanisms to recover the scaled-out noise for t >= 1.

    Index 0 is an initial condition and gets noise 0.  Round-trips exactly:
    ``simulate_with_noise(spec, abduct_noise(spec, p), p.values[:, 0])`` == p.
    """
    spec.validate()
    names = spec.graph.variables
    if paths.variables != names:
        raise ValueError(f"path variables {paths.variables} != spec variables {names}")
    values = paths.values
    noise = np.zeros_like(values)
    sigma = spec.noise_vector()
    for j, v in enumerate(names):
        residual = values[:, 1:, j].copy()
        for parent, lag in graph_mod.parents(spec.graph, v):
            coeff = spec.coefficient(v, parent, lag)
            if coeff == 0.0:
                continue
            k = names.index(parent)
            source = values[:, :-1, k] if lag == 1 else values[:, 1:, k]
            residual -= coeff * source
        noise[:, 1:, j] = residual / sigma[j]
    return NoiseBatch(names, noise)


def to_csv(paths: PathBatch) -> str:
    """Render ``sequence,t,<vars...>`` rows with 17 significant digits."""
    out = io.StringIO()
    out.write("sequence,t," + ",".join(paths.variables) + "\n")
    n, t_len, _ = paths.values.shape
    for i in range(n):
        for t in range(t_len):
            row = ",".join(f"{x:.17g}" for x in paths.values[i, t])
            out.write(f"{i},{t},{row}\n")
    return out.getvalue()


def write_csv(paths: PathBatch, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(to_csv(paths))


def read_csv(path_or_buffer) -> PathBatch:
    """Parse the :func:`to_csv` format back into a :class:`PathBatch`."""
    if hasattr(path_or_buffer, "read"):
        text = path_or_buffer.read()
    else:
        with open(path_or_buffer, "r", encoding="utf-8") as fh:
            text = fh.read()
    lines = [line for line in text.splitlines() if line]
    header = lines[0].split(",")
    if header[:2] != ["sequence", "t"]:
        raise ValueError("expected header starting with 'sequence,t'")
    variables = tuple(header[2:])
    rows = [line.split(",") for line in lines[1:]]
    if not rows:
        raise ValueError("no data rows")
    n = int(rows[-1][0]) + 1
    t_len = int(rows[-1][1]) + 1
    values = np.empty((n, t_len, len(variables)))
    for row in rows:
        i, t = int(row[0]), int(row[1])
        values[i, t] = [float(x) for x in row[2:]]
    return PathBatch(variables, values)
