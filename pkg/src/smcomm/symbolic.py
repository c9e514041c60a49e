"""Neuro-symbolic extraction: trained actors -> probabilistic state->SR->action graph.

Pipeline: enumerate every state through the quantized greedy policy,
cluster message cells, count sr->action frequencies into a graph, then
emit ProbLog clauses ``p::action_<a> :- sr_<label>.``
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    CoverageError,
    EnumerationRefusedError,
    InfeasibleEditError,
    ParseError,
    RejectedInputError,
)
from .marl import CommPolicy, ReferentialEnv

DEFAULT_STATE_CAP = 100_000
_LABEL_RE = re.compile(r"[A-Za-z0-9_]+\Z")


class MappingRow(NamedTuple):
    state: int
    cells: tuple[int, ...]
    action: int


@dataclass(frozen=True)
class MappingTable:
    rows: tuple[MappingRow, ...]
    levels: int

    def __len__(self):
        return len(self.rows)


def enumerate_mappings(policy: CommPolicy, env: ReferentialEnv,
                       state_cap: int = DEFAULT_STATE_CAP) -> MappingTable:
    """Feed every state through the quantized greedy actors."""
    if policy.levels is None:
        raise RejectedInputError("extraction needs a quantized (finite-alphabet) policy")
    if env.n_targets > state_cap:
        raise EnumerationRefusedError(
            f"{env.n_targets} states exceed the enumeration cap of {state_cap}")
    states = np.arange(env.n_targets)
    cells, actions = policy.act(states, env)
    rows = tuple(MappingRow(int(s), tuple(int(v) for v in c), int(a))
                 for s, c, a in zip(states, cells, actions))
    return MappingTable(rows, policy.levels)


@dataclass(frozen=True)
class MergeRule:
    radius: int = 0

    def __post_init__(self):
        if self.radius < 0:
            raise RejectedInputError("merge radius must be non-negative")

    @classmethod
    def exact_cell(cls) -> "MergeRule":
        return cls(0)

    @classmethod
    def within(cls, r: int) -> "MergeRule":
        return cls(r)


class ClusteredRow(NamedTuple):
    state: int
    cells: tuple[int, ...]
    label: str
    action: int


@dataclass(frozen=True)
class ClusteredTable:
    rows: tuple[ClusteredRow, ...]
    dictionary: dict[tuple[int, ...], str]
    representatives: dict[str, tuple[int, ...]]


def _chebyshev(a, b) -> int:
    return max((abs(x - y) for x, y in zip(a, b)), default=0)


def cluster_srs(table: MappingTable, rule: MergeRule = MergeRule()) -> ClusteredTable:
    """Single-linkage clustering of message cells under Chebyshev distance.

    Clusters are labelled "0", "1", ... in lexicographic order of their
    smallest member.
    """
    tuples = sorted({row.cells for row in table.rows})
    parent = list(range(len(tuples)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if rule.radius > 0:
        for i in range(len(tuples)):
            for j in range(i + 1, len(tuples)):
                if _chebyshev(tuples[i], tuples[j]) <= rule.radius:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list] = {}
    for i, t in enumerate(tuples):
        groups.setdefault(find(i), []).append(t)
    ordered = sorted(groups.values(), key=lambda members: min(members))
    dictionary = {}
    reps = {}
    for rank, members in enumerate(ordered):
        label = str(rank)
        reps[label] = min(members)
        for t in members:
            dictionary[t] = label
    rows = tuple(ClusteredRow(r.state, r.cells, dictionary[r.cells], r.action)
                 for r in table.rows)
    return ClusteredTable(rows, dictionary, reps)


@dataclass(frozen=True)
class SymbolicGraph:
    """state -> sr (deterministic) and sr -> action with count-ratio probabilities."""

    state_to_sr: dict[int, str]
    counts: dict[str, dict[int, int]]  # sr label -> action -> support
    sr_members: dict[str, tuple[tuple[int, ...], ...]] = field(default_factory=dict)

    @property
    def sr_nodes(self) -> list[str]:
        return list(self.counts)

    @property
    def actions(self) -> list[int]:
        return sorted({a for edges in self.counts.values() for a in edges})

    def support(self, sr: str) -> int:
        return sum(self._edges(sr).values())

    def _edges(self, sr: str) -> dict[int, int]:
        try:
            return self.counts[sr]
        except KeyError:
            raise RejectedInputError(f"no sr node {sr!r}") from None

    def exact_probability(self, sr: str, action: int) -> Fraction:
        edges = self._edges(sr)
        return Fraction(edges.get(action, 0), sum(edges.values()))

    def probability(self, sr: str, action: int) -> float:
        edges = self._edges(sr)
        return edges.get(action, 0) / sum(edges.values())

    def distribution(self, sr: str) -> dict[int, float]:
        edges = self._edges(sr)
        total = sum(edges.values())
        return {a: c / total for a, c in sorted(edges.items())}

    def edge_probabilities(self) -> dict[tuple[str, int], float]:
        return {(sr, a): p for sr in self.counts for a, p in self.distribution(sr).items()}

    def to_json(self) -> dict:
        return {
            "states": {str(s): sr for s, sr in sorted(self.state_to_sr.items())},
            "sr_nodes": {
                sr: {"support": self.support(sr),
                     "members": [list(m) for m in self.sr_members.get(sr, ())],
                     "edges": [{"action": a, "count": c,
                                "p": self.probability(sr, a)}
                               for a, c in sorted(edges.items())]}
                for sr, edges in self.counts.items()},
        }

    def to_dot(self) -> str:
        lines = ["digraph symbolic_sm {", "  rankdir=LR;"]
        for s in sorted(self.state_to_sr):
            lines.append(f'  "state_{s}" [shape=box];')
        for sr in self.counts:
            lines.append(f'  "sr_{sr}" [shape=ellipse];')
        for a in self.actions:
            lines.append(f'  "action_{a}" [shape=diamond];')
        for s, sr in sorted(self.state_to_sr.items()):
            lines.append(f'  "state_{s}" -> "sr_{sr}";')
        for sr in self.counts:
            for a, p in self.distribution(sr).items():
                lines.append(f'  "sr_{sr}" -> "action_{a}" [label="{p:.4f}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_graph(clustered: ClusteredTable) -> SymbolicGraph:
    if not clustered.rows:
        raise RejectedInputError("cannot build a graph from an empty table")
    state_to_sr = {}
    counts: dict[str, dict[int, int]] = {}
    for row in sorted(clustered.rows, key=lambda r: (int(r.label), r.state)):
        state_to_sr[row.state] = row.label
        edges = counts.setdefault(row.label, {})
        edges[row.action] = edges.get(row.action, 0) + 1
    counts = {sr: dict(sorted(edges.items())) for sr, edges in counts.items()}
    members: dict[str, list] = {}
    for t, label in sorted(clustered.dictionary.items()):
        members.setdefault(label, []).append(t)
    return SymbolicGraph(dict(sorted(state_to_sr.items())), counts,
                         {k: tuple(v) for k, v in members.items()})


def extract(policy: CommPolicy, env: ReferentialEnv,
            rule: MergeRule = MergeRule()) -> SymbolicGraph:
    return build_graph(cluster_srs(enumerate_mappings(policy, env), rule))


class Clause(NamedTuple):
    p: float
    action: int
    sr: str


@dataclass(frozen=True)
class ProbLogProgram:
    clauses: tuple[Clause, ...]

    def to_text(self) -> str:
        return "".join(f"{c.p:.12f}::action_{c.action} :- sr_{c.sr}.\n" for c in self.clauses)

    def edges(self) -> dict[tuple[str, int], float]:
        return {(c.sr, c.action): c.p for c in self.clauses}


def to_program(graph: SymbolicGraph) -> ProbLogProgram:
    return ProbLogProgram(tuple(Clause(p, a, sr) for sr in graph.counts
                                for a, p in graph.distribution(sr).items()))


def emit_problog(graph: SymbolicGraph) -> str:
    return to_program(graph).to_text()


_TOKEN_SPEC = [
    ("NUMBER", r"\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"),
    ("PROB_SEP", r"::"),
    ("NECK", r":-"),
    ("ATOM", r"[a-z][A-Za-z0-9_]*"),
    ("DOT", r"\."),
    ("WS", r"[ \t]+"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{n}>{p})" for n, p in _TOKEN_SPEC))
_EXPECTED = ("NUMBER", "PROB_SEP", "ATOM", "NECK", "ATOM", "DOT")


def parse_problog(text: str) -> ProbLogProgram:
    """Parse clauses of the form ``p::action_<int> :- sr_<label>.``.

    Blank lines and ``%`` comments are skipped; one clause per line.
    """
    clauses = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("%", 1)[0]
        if not body.strip():
            continue
        tokens = []
        pos = 0
        while pos < len(body):
            m = _TOKEN_RE.match(body, pos)
            if m is None:
                raise ParseError(f"unexpected character {body[pos]!r}", line=lineno,
                                 column=pos + 1)
            if m.lastgroup != "WS":
                tokens.append((m.lastgroup, m.group(), pos + 1))
            pos = m.end()
        for i, kind in enumerate(_EXPECTED):
            if i >= len(tokens):
                raise ParseError(f"clause ends early, expected {kind}", line=lineno,
                                 column=len(body) + 1)
            if tokens[i][0] != kind:
                raise ParseError(f"expected {kind}, found {tokens[i][1]!r}", line=lineno,
                                 column=tokens[i][2])
        if len(tokens) > len(_EXPECTED):
            raise ParseError(f"trailing text {tokens[len(_EXPECTED)][1]!r}", line=lineno,
                             column=tokens[len(_EXPECTED)][2])
        p = float(tokens[0][1])
        if not 0.0 < p <= 1.0:
            raise ParseError(f"probability {p} outside (0, 1]", line=lineno,
                             column=tokens[0][2])
        head, sr_atom = tokens[2], tokens[4]
        if not re.fullmatch(r"action_\d+", head[1]):
            raise ParseError(f"head {head[1]!r} is not action_<id>", line=lineno,
                             column=head[2])
        if not sr_atom[1].startswith("sr_") or len(sr_atom[1]) == 3:
            raise ParseError(f"body {sr_atom[1]!r} is not sr_<label>", line=lineno,
                             column=sr_atom[2])
        clauses.append(Clause(p, int(head[1][len("action_"):]), sr_atom[1][len("sr_"):]))
    return ProbLogProgram(tuple(clauses))


def expression_entropy(graph: SymbolicGraph, sr: str) -> float:
    """Shannon entropy (bits) of the action distribution leaving ``sr``."""
    h = 0.0
    for p in graph.distribution(sr).values():
        if p < 1.0:
            h -= p * math.log2(p)
    return h


def clause_surprisal(graph: SymbolicGraph, sr: str, action: int) -> float:
    p = graph.probability(sr, action)
    if p == 0:
        raise RejectedInputError(f"no edge sr_{sr} -> action_{action}")
    return -math.log2(p)


def graph_entropy(graph: SymbolicGraph, weighting: str = "support",
                  nodes: Sequence[str] | None = None) -> float:
    """Mean node entropy over ``nodes`` (default: all), uniform or support weighted."""
    nodes = graph.sr_nodes if nodes is None else list(nodes)
    if not nodes:
        return 0.0
    h = np.array([expression_entropy(graph, sr) for sr in nodes])
    if weighting == "uniform":
        return float(h.mean())
    if weighting == "support":
        w = np.array([graph.support(sr) for sr in nodes], dtype=np.float64)
        return float(np.dot(h, w) / w.sum())
    raise RejectedInputError(f"unknown weighting {weighting!r}")


def entropy_report(graph: SymbolicGraph) -> dict:
    return {
        "graph_entropy_support_bits": graph_entropy(graph, "support"),
        "graph_entropy_uniform_bits": graph_entropy(graph, "uniform"),
        "nodes": {sr: {"entropy_bits": expression_entropy(graph, sr),
                       "support": graph.support(sr),
                       "surprisal_bits": {str(a): clause_surprisal(graph, sr, a)
                                          for a in graph.counts[sr]}}
                  for sr in graph.sr_nodes},
    }


def replay(graph: SymbolicGraph, state: int, rng: np.random.Generator) -> int:
    """Sample an action for ``state`` from the graph."""
    if state not in graph.state_to_sr:
        raise CoverageError(f"state {state} is not covered by the graph")
    dist = graph.distribution(graph.state_to_sr[state])
    actions = list(dist)
    if len(actions) == 1:
        return actions[0]
    cum = np.cumsum(list(dist.values()))
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return actions[min(idx, len(actions) - 1)]


def fidelity_by_state(graph: SymbolicGraph, policy: CommPolicy,
                      env: ReferentialEnv) -> dict[int, float]:
    """Total-variation distance between graph and actor action per state.

    The actor is deterministic, so the distance is 1 - p(actor action).
    """
    _, actions = policy.act(np.arange(env.n_targets), env)
    out = {}
    for state, action in zip(range(env.n_targets), actions):
        if state not in graph.state_to_sr:
            raise CoverageError(f"state {state} is not covered by the graph")
        out[state] = 1.0 - graph.probability(graph.state_to_sr[state], int(action))
    return out


def fidelity(graph: SymbolicGraph, policy: CommPolicy, env: ReferentialEnv) -> float:
    return max(fidelity_by_state(graph, policy, env).values())


@dataclass(frozen=True)
class ForbidAction:
    action: int


@dataclass(frozen=True)
class RelabelSR:
    old: str
    new: str


def edit_graph(graph: SymbolicGraph, edit: ForbidAction | RelabelSR) -> SymbolicGraph:
    if isinstance(edit, ForbidAction):
        if edit.action not in graph.actions:
            raise RejectedInputError(f"action {edit.action} does not occur in the graph")
        counts = {}
        for sr, edges in graph.counts.items():
            kept = {a: c for a, c in edges.items() if a != edit.action}
            if not kept:
                raise InfeasibleEditError(
                    f"forbidding action {edit.action} leaves sr_{sr} without an action")
            counts[sr] = kept
        return SymbolicGraph(dict(graph.state_to_sr), counts, dict(graph.sr_members))
    if isinstance(edit, RelabelSR):
        if edit.old not in graph.counts:
            raise RejectedInputError(f"no sr node {edit.old!r}")
        if edit.new != edit.old and edit.new in graph.counts:
            raise RejectedInputError(f"sr label {edit.new!r} already in use")
        if not _LABEL_RE.match(edit.new):
            raise RejectedInputError(f"sr label {edit.new!r} is not a valid atom suffix")

        def rename(sr):
            return edit.new if sr == edit.old else sr

        counts = {rename(sr): dict(e) for sr, e in graph.counts.items()}
        states = {s: rename(sr) for s, sr in graph.state_to_sr.items()}
        members = {rename(sr): m for sr, m in graph.sr_members.items()}
        return SymbolicGraph(states, counts, members)
    raise RejectedInputError(f"unknown edit {edit!r}")


def graphs_equal(a: SymbolicGraph, b: SymbolicGraph) -> bool:
    return (a.state_to_sr == b.state_to_sr
            and list(a.counts.items()) == list(b.counts.items()))


def dump_json(graph: SymbolicGraph) -> str:
    return json.dumps(graph.to_json(), indent=2, sort_keys=True)
