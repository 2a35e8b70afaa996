"""Lag-annotated causal DAGs and deterministic evaluation orderings.

A graph is a list of named variables plus directed edges ``(source, target,
lag)``.  Lag-1 edges connect a variable at time ``t-1`` to a variable at
time ``t``; lag-0 edges act within a time step and must form a DAG.  The
graph is the single source of truth for mechanism wiring in the simulator
and the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CausalGraph:
    """Variables plus lag-annotated directed edges.

    Immutable after construction; safe to share across threads.  Use
    :func:`validate` to check the structural invariants (returned as a
    report, not raised).
    """

    variables: tuple[str, ...]
    edges: tuple[tuple[str, str, int], ...] = ()

    def __init__(self, variables, edges=()):
        object.__setattr__(self, "variables", tuple(variables))
        object.__setattr__(
            self, "edges", tuple((s, t, int(lag)) for s, t, lag in edges)
        )

    def index(self, variable: str) -> int:
        try:
            return self.variables.index(variable)
        except ValueError:
            raise KeyError(f"unknown variable {variable!r}") from None

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    def max_lag(self) -> int:
        return max((lag for _, _, lag in self.edges), default=0)

    def to_dict(self) -> dict:
        return {
            "variables": list(self.variables),
            "edges": [[s, t, lag] for s, t, lag in self.edges],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "CausalGraph":
        return cls(payload["variables"], [tuple(e) for e in payload["edges"]])


def validate(graph: CausalGraph) -> str | None:
    """Check the graph invariants; return ``None`` if all hold.

    On failure, returns a message naming the first violated invariant in a
    fixed check order: variable names, edge endpoints, duplicate edges,
    lag signs, lag-0 acyclicity.
    """
    seen: set[str] = set()
    for name in graph.variables:
        if not name:
            return "empty variable name"
        if name in seen:
            return f"duplicate variable name {name!r}"
        seen.add(name)

    for source, target, lag in graph.edges:
        if source not in seen:
            return f"edge source {source!r} is not a declared variable"
        if target not in seen:
            return f"edge target {target!r} is not a declared variable"
        if lag < 0:
            return f"edge ({source!r}, {target!r}) has negative lag {lag}"

    if len(set(graph.edges)) != len(graph.edges):
        dup = _first_duplicate(graph.edges)
        return f"duplicate edge {dup}"

    cycle_member = _lag0_cycle_member(graph)
    if cycle_member is not None:
        return f"lag-0 cycle through {cycle_member!r}"
    return None


def require_valid(graph: CausalGraph) -> None:
    """Raise ``ValueError`` if the graph fails :func:`validate`."""
    report = validate(graph)
    if report is not None:
        raise ValueError(f"invalid graph: {report}")


def require_max_lag(graph: CausalGraph, limit: int = 1) -> None:
    """Reject lags beyond what the mechanism wiring supports (0 and 1)."""
    for source, target, lag in graph.edges:
        if lag > limit:
            raise ValueError(
                f"edge ({source!r} -> {target!r}) has lag {lag}; "
                f"only lags 0..{limit} are supported"
            )


def parents(graph: CausalGraph, variable: str) -> list[tuple[str, int]]:
    """All ``(parent, lag)`` pairs targeting ``variable``, in edge order."""
    if variable not in graph.variables:
        raise KeyError(f"unknown variable {variable!r}")
    return [(s, lag) for s, t, lag in graph.edges if t == variable]


def topological_order(graph: CausalGraph) -> list[str]:
    """Order variables so every lag-0 parent precedes its child.

    Ties are broken by declaration order, making the result deterministic.
    Lagged edges impose no ordering constraint within a time step.
    """
    require_valid(graph)
    order: list[str] = []
    placed: set[str] = set()
    remaining = list(graph.variables)
    lag0_parents = {
        v: [s for s, t, lag in graph.edges if t == v and lag == 0 and s != v]
        for v in graph.variables
    }
    while remaining:
        for name in remaining:
            if all(p in placed for p in lag0_parents[name]):
                order.append(name)
                placed.add(name)
                remaining.remove(name)
                break
        else:  # pragma: no cover - unreachable on a validated graph
            raise ValueError("lag-0 cycle survived validation")
    return order


def descendants(graph: CausalGraph, variable: str) -> set[str]:
    """Variables reachable from ``variable`` along directed edges (any lag).

    Includes the variable itself only if it lies on a cycle through lags,
    e.g. a self-loop at lag 1.
    """
    if variable not in graph.variables:
        raise KeyError(f"unknown variable {variable!r}")
    children: dict[str, set[str]] = {v: set() for v in graph.variables}
    for s, t, _ in graph.edges:
        children[s].add(t)
    reached: set[str] = set()
    frontier = [variable]
    while frontier:
        node = frontier.pop()
        for child in children[node]:
            if child not in reached:
                reached.add(child)
                frontier.append(child)
    return reached


def _first_duplicate(edges):
    seen = set()
    for edge in edges:
        if edge in seen:
            return edge
        seen.add(edge)
    return None


def _lag0_cycle_member(graph: CausalGraph) -> str | None:
    """Return a variable on a lag-0 cycle, or ``None`` if acyclic."""
    adjacency = {v: [] for v in graph.variables}
    indegree = {v: 0 for v in graph.variables}
    for s, t, lag in graph.edges:
        if lag == 0:
            adjacency[s].append(t)
            indegree[t] += 1
    queue = [v for v in graph.variables if indegree[v] == 0]
    visited = 0
    while queue:
        node = queue.pop()
        visited += 1
        for child in adjacency[node]:
            indegree[child] -= 1
            if indegree[child] == 0:
                queue.append(child)
    if visited == len(graph.variables):
        return None
    for v in graph.variables:
        if indegree[v] > 0:
            return v
    return None  # pragma: no cover


def mean_reverting_pair() -> CausalGraph:
    """The two-asset graph used by the bundled experiments.

    X drives itself and Y at lag 1; Y also feeds back on itself at lag 1.
    """
    return CausalGraph(
        variables=("X", "Y"),
        edges=(("X", "X", 1), ("Y", "Y", 1), ("X", "Y", 1)),
    )
