"""Lewis signaling games: Roth-Erev learning, exact payoff analysis, KB decoding.

The sender maps types to signals, the receiver maps (possibly corrupted)
signals to responses. Policies are propensity matrices; the sampling
probability of a cell is its row-normalized propensity.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .channels import DiscreteChannel
from .errors import ConfigurationError, EnumerationRefusedError, RejectedInputError

PROB_TOL = 1e-12
NASH_TOL = 1e-9
MAX_ENUMERATION_CELLS = 10**6


@dataclass(frozen=True, eq=False)
class SignalingGame:
    n_types: int
    n_signals: int
    n_responses: int
    type_prior: np.ndarray
    payoff: np.ndarray  # [type, response]
    channel: DiscreteChannel

    def __post_init__(self):
        for name in ("n_types", "n_signals", "n_responses"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        prior = np.array(self.type_prior, dtype=np.float64)
        payoff = np.array(self.payoff, dtype=np.float64)
        if prior.shape != (self.n_types,) or np.any(prior < 0) \
                or abs(prior.sum() - 1.0) > PROB_TOL:
            raise ConfigurationError("type prior must be a probability vector over types")
        if payoff.shape != (self.n_types, self.n_responses) or not np.all(np.isfinite(payoff)):
            raise ConfigurationError("payoff must be a finite [type, response] matrix")
        if self.channel.size != self.n_signals:
            raise ConfigurationError(
                f"channel alphabet {self.channel.size} != n_signals {self.n_signals}")
        prior.setflags(write=False)
        payoff.setflags(write=False)
        object.__setattr__(self, "type_prior", prior)
        object.__setattr__(self, "payoff", payoff)

    @classmethod
    def identity(cls, n_types: int, n_signals: int, n_responses: int | None = None,
                 channel: DiscreteChannel | None = None, prior=None) -> "SignalingGame":
        """Game with payoff 1 iff response index equals type index."""
        n_responses = n_types if n_responses is None else n_responses
        payoff = np.zeros((n_types, n_responses))
        for t in range(min(n_types, n_responses)):
            payoff[t, t] = 1.0
        if prior is None:
            prior = np.full(n_types, 1.0 / n_types)
        if channel is None:
            channel = DiscreteChannel.identity(n_signals)
        return cls(n_types, n_signals, n_responses, prior, payoff, channel)

    def best_response_to(self, type_weights) -> int:
        """Response maximizing expected payoff under (unnormalized) type weights."""
        return int(np.argmax(np.asarray(type_weights) @ self.payoff))


def _row_argmax(m: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Row argmax; entries within ``tol`` of the max tie, lowest index wins."""
    top = m.max(axis=1, keepdims=True)
    return np.argmax(m >= top - tol, axis=1)


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    return m / m.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class PolicyPair:
    sender: np.ndarray    # [type, signal] propensities
    receiver: np.ndarray  # [signal, response] propensities

    def __post_init__(self):
        for name in ("sender", "receiver"):
            m = np.array(getattr(self, name), dtype=np.float64)
            if m.ndim != 2 or np.any(m < 0) or np.any(m.sum(axis=1) <= 0):
                raise ConfigurationError(
                    f"{name} propensities must be non-negative with positive row sums")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def uniform(cls, game: SignalingGame, initial: float = 1.0) -> "PolicyPair":
        return cls(np.full((game.n_types, game.n_signals), initial),
                   np.full((game.n_signals, game.n_responses), initial))

    @classmethod
    def from_maps(cls, sender_map: Sequence[int], receiver_map: Sequence[int],
                  n_signals: int, n_responses: int) -> "PolicyPair":
        """Deterministic (one-hot) policies from type->signal and signal->response maps."""
        s = np.zeros((len(sender_map), n_signals))
        s[np.arange(len(sender_map)), sender_map] = 1.0
        r = np.zeros((n_signals, n_responses))
        r[np.arange(n_signals), receiver_map] = 1.0
        return cls(s, r)

    def sender_probs(self) -> np.ndarray:
        return _normalize_rows(self.sender)

    def receiver_probs(self) -> np.ndarray:
        return _normalize_rows(self.receiver)

    def greedy_sender(self, tol: float = 0.0) -> np.ndarray:
        return _row_argmax(self.sender_probs(), tol)

    def greedy_receiver(self, tol: float = 0.0) -> np.ndarray:
        return _row_argmax(self.receiver_probs(), tol)

    def greedy(self, tol: float = 0.0) -> "PolicyPair":
        return PolicyPair.from_maps(self.greedy_sender(tol), self.greedy_receiver(tol),
                                    self.sender.shape[1], self.receiver.shape[1])

    def check_game(self, game: SignalingGame) -> None:
        if self.sender.shape != (game.n_types, game.n_signals) or \
                self.receiver.shape != (game.n_signals, game.n_responses):
            raise RejectedInputError("policy shapes do not match the game")


class Transcript(NamedTuple):
    """One played round."""
    type: int
    sent_signal: int
    received_signal: int
    response: int
    payoff: float


def _sample(cum_row: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cum_row, u * cum_row[-1], side="right")),
               len(cum_row) - 1)


def play_round(game: SignalingGame, policies: PolicyPair,
               rng: np.random.Generator) -> Transcript:
    """Draw type, signal, channel output and response; consumes 4 uniforms."""
    u = rng.random(4)
    return _play(game, np.cumsum(game.type_prior), policies.sender, policies.receiver,
                 np.cumsum(game.channel.matrix, axis=1), u)


def _play(game, prior_cum, sender, receiver, channel_cum, u) -> Transcript:
    t = _sample(prior_cum, u[0])
    s = _sample(np.cumsum(sender[t]), u[1])
    s_rx = _sample(channel_cum[s], u[2])
    r = _sample(np.cumsum(receiver[s_rx]), u[3])
    return Transcript(t, s, s_rx, r, float(game.payoff[t, r]))


def play_rounds(game: SignalingGame, policies: PolicyPair, n_rounds: int,
                rng: np.random.Generator) -> list[Transcript]:
    """Many independent rounds with fixed policies (vectorized sampling)."""
    u = rng.random((n_rounds, 4))

    def draw(cum, uu):
        cum = np.atleast_2d(cum)
        idx = np.sum(cum <= (uu * cum[:, -1])[:, None], axis=1)
        return np.minimum(idx, cum.shape[1] - 1)

    t = draw(np.broadcast_to(np.cumsum(game.type_prior), (n_rounds, game.n_types)), u[:, 0])
    s = draw(np.cumsum(policies.sender, axis=1)[t], u[:, 1])
    s_rx = draw(np.cumsum(game.channel.matrix, axis=1)[s], u[:, 2])
    r = draw(np.cumsum(policies.receiver, axis=1)[s_rx], u[:, 3])
    pay = game.payoff[t, r]
    return [Transcript(int(a), int(b), int(c), int(d), float(e))
            for a, b, c, d, e in zip(t, s, s_rx, r, pay)]


def reinforce_update(policies: PolicyPair, transcript: Transcript,
                     reinforcement: float = 1.0) -> PolicyPair:
    """Roth-Erev step: add reinforcement * payoff to the two chosen cells."""
    if reinforcement < 0:
        raise ConfigurationError("reinforcement must be non-negative")
    delta = reinforcement * transcript.payoff
    if delta == 0:
        return policies
    sender = policies.sender.copy()
    receiver = policies.receiver.copy()
    t, s, s_rx, r = transcript[:4]
    sender[t, s] = max(sender[t, s] + delta, 0.0)
    receiver[s_rx, r] = max(receiver[s_rx, r] + delta, 0.0)
    return PolicyPair(sender, receiver)


def expected_payoff(game: SignalingGame, policies: PolicyPair) -> float:
    """Exact sum over (type, signal, received, response) of prior*sender*channel*receiver*payoff."""
    policies.check_game(game)
    return float(np.einsum("t,ts,sk,kr,tr->", game.type_prior, policies.sender_probs(),
                           game.channel.matrix, policies.receiver_probs(), game.payoff))


class Deviation(NamedTuple):
    player: str     # "sender" or "receiver"
    row: int        # type (sender) or received signal (receiver)
    current: int
    alternative: int
    gain: float


@dataclass
class NashVerdict:
    is_nash: bool
    improving_deviations: list[Deviation]
    payoff: float


def _value_tables(game: SignalingGame, sender_p: np.ndarray, receiver_p: np.ndarray):
    # sender_value[t, s]: prior-weighted payoff of type t sending s
    sender_value = game.type_prior[:, None] * (
        game.channel.matrix @ receiver_p @ game.payoff.T).T
    # receiver_value[k, r]: payoff mass from answering r to received signal k
    receiver_value = ((game.type_prior[:, None] * sender_p) @ game.channel.matrix).T @ game.payoff
    return sender_value, receiver_value


def best_response_check(game: SignalingGame, policies: PolicyPair,
                        tol: float = NASH_TOL) -> NashVerdict:
    """Test every unilateral pure deviation of the greedy profile.

    Expected payoff is additive over sender rows and over receiver rows, so
    row-wise deviations cover every pure strategy deviation.
    """
    if game.n_types * game.n_signals > MAX_ENUMERATION_CELLS or \
            game.n_signals * game.n_responses > MAX_ENUMERATION_CELLS:
        raise EnumerationRefusedError("game too large for deviation enumeration")
    policies.check_game(game)
    greedy = policies.greedy()
    sender_map = greedy.greedy_sender()
    receiver_map = greedy.greedy_receiver()
    sv, rv = _value_tables(game, greedy.sender, greedy.receiver)
    deviations = []
    for t in range(game.n_types):
        base = sv[t, sender_map[t]]
        for s in range(game.n_signals):
            gain = sv[t, s] - base
            if gain > tol:
                deviations.append(Deviation("sender", t, int(sender_map[t]), s, float(gain)))
    for k in range(game.n_signals):
        base = rv[k, receiver_map[k]]
        for r in range(game.n_responses):
            gain = rv[k, r] - base
            if gain > tol:
                deviations.append(Deviation("receiver", k, int(receiver_map[k]), r, float(gain)))
    return NashVerdict(not deviations, deviations, expected_payoff(game, greedy))


SEPARATING = "separating"
PARTIAL_POOLING = "partial_pooling"
POOLING = "pooling"


def classify_sender_map(sender_map: Sequence[int]) -> str:
    used = set(int(s) for s in sender_map)
    if len(used) == len(sender_map):
        return SEPARATING
    if len(used) == 1:
        return POOLING
    return PARTIAL_POOLING


def classify_equilibrium(policies: PolicyPair, tol: float = 0.0) -> str:
    return classify_sender_map(policies.greedy_sender(tol))


@dataclass
class ConvergenceReport:
    converged: bool
    rounds: int
    classification: str
    is_nash: bool
    greedy_payoff: float
    expected_payoff: float
    payoff_trajectory: list[float] = field(default_factory=list)
    trajectory_stride: int = 1

    def to_json(self) -> dict:
        return {
            "converged": self.converged,
            "rounds": self.rounds,
            "classification": self.classification,
            "is_nash": self.is_nash,
            "greedy_payoff": self.greedy_payoff,
            "expected_payoff": self.expected_payoff,
            "trajectory_stride": self.trajectory_stride,
            "payoff_trajectory": list(self.payoff_trajectory),
        }


@dataclass(frozen=True)
class TrainConfig:
    max_rounds: int = 50_000
    window: int = 5_000
    stability_tol: float = NASH_TOL  # strict-improvement threshold of the NE test
    reinforcement: float = 1.0
    initial_propensity: float = 1.0
    trajectory_points: int = 100

    def __post_init__(self):
        if self.window >= self.max_rounds:
            raise ConfigurationError("window must be smaller than max_rounds")


def train_to_equilibrium(game: SignalingGame, config: TrainConfig,
                         rng: np.random.Generator,
                         policies: PolicyPair | None = None
                         ) -> tuple[PolicyPair, ConvergenceReport]:
    """Roth-Erev training until the greedy profile is stable and a pure NE.

    Round by round this is identical to alternating :func:`play_round` and
    :func:`reinforce_update`, with uniforms drawn in blocks for speed.
    """
    if policies is None:
        policies = PolicyPair.uniform(game, config.initial_propensity)
    policies.check_game(game)
    sender = np.array(policies.sender)
    receiver = np.array(policies.receiver)
    prior_cum = np.cumsum(game.type_prior)
    channel_cum = np.cumsum(game.channel.matrix, axis=1)
    stride = max(1, config.max_rounds // max(1, config.trajectory_points))
    trajectory = []
    running = 0.0

    def greedy_key():
        return (tuple(_row_argmax(sender)), tuple(_row_argmax(receiver)))

    key = greedy_key()
    stable_for = 0
    verdict_cache: dict = {}
    converged = False
    rounds = 0
    block = 4096
    while rounds < config.max_rounds and not converged:
        u_block = rng.random((min(block, config.max_rounds - rounds), 4))
        for u in u_block:
            tr = _play(game, prior_cum, sender, receiver, channel_cum, u)
            rounds += 1
            delta = config.reinforcement * tr.payoff
            if delta:
                t, s, s_rx, r = tr[:4]
                sender[t, s] = max(sender[t, s] + delta, 0.0)
                receiver[s_rx, r] = max(receiver[s_rx, r] + delta, 0.0)
            running += tr.payoff
            if rounds % stride == 0:
                trajectory.append(running / stride)
                running = 0.0
            new_key = greedy_key() if delta else key
            if new_key == key:
                stable_for += 1
            else:
                key, stable_for = new_key, 1
            if stable_for >= config.window:
                if key not in verdict_cache:
                    verdict_cache[key] = best_response_check(
                        game, PolicyPair(sender, receiver), config.stability_tol).is_nash
                if verdict_cache[key]:
                    converged = True
                    break
    final = PolicyPair(sender, receiver)
    verdict = best_response_check(game, final, config.stability_tol)
    report = ConvergenceReport(
        converged=converged,
        rounds=rounds,
        classification=classify_equilibrium(final),
        is_nash=verdict.is_nash,
        greedy_payoff=verdict.payoff,
        expected_payoff=expected_payoff(game, final),
        payoff_trajectory=trajectory,
        trajectory_stride=stride,
    )
    return final, report


@dataclass(frozen=True, eq=False)
class KnowledgeBase:
    """Context-conditioned type prior: context_prior[c, t] = P(type t | context c)."""

    context_prior: np.ndarray

    def __post_init__(self):
        m = np.array(self.context_prior, dtype=np.float64)
        if m.ndim != 2 or np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1.0) > PROB_TOL):
            raise ConfigurationError("each context prior must be a probability vector")
        m.setflags(write=False)
        object.__setattr__(self, "context_prior", m)

    @property
    def n_contexts(self) -> int:
        return self.context_prior.shape[0]

    @classmethod
    def degenerate(cls, n_types: int) -> "KnowledgeBase":
        """Context c reveals type c with certainty."""
        return cls(np.eye(n_types))

    @classmethod
    def uninformative(cls, n_types: int, n_contexts: int = 1) -> "KnowledgeBase":
        return cls(np.full((n_contexts, n_types), 1.0 / n_types))


class KbDecision(NamedTuple):
    response: int
    ambiguous: bool


def kb_decode(received_signal: int, context: int, kb: KnowledgeBase,
              game: SignalingGame, sender_greedy_map: Sequence[int]) -> KbDecision:
    """Best response under the posterior over types given signal and context."""
    if not 0 <= context < kb.n_contexts:
        raise RejectedInputError(f"context {context} not covered by the knowledge base")
    sender_map = np.asarray(sender_greedy_map)
    consistent = (sender_map == received_signal).astype(np.float64)
    posterior = kb.context_prior[context] * consistent
    if posterior.sum() > 0:
        return KbDecision(game.best_response_to(posterior), False)
    fallback = game.type_prior * consistent
    if fallback.sum() == 0:
        fallback = game.type_prior
    return KbDecision(game.best_response_to(fallback), True)


def kb_payoff(game: SignalingGame, sender_map: Sequence[int], kb_used: KnowledgeBase,
              context: int, kb_true: KnowledgeBase | None = None) -> float:
    """Expected payoff in one context when the receiver decodes with ``kb_used``.

    Types are drawn from ``kb_true`` (defaults to ``kb_used``); the signal
    passes through the game channel.
    """
    kb_true = kb_used if kb_true is None else kb_true
    total = 0.0
    for t, pt in enumerate(kb_true.context_prior[context]):
        if pt == 0:
            continue
        for k, pk in enumerate(game.channel.matrix[sender_map[t]]):
            if pk == 0:
                continue
            r = kb_decode(k, context, kb_used, game, sender_map).response
            total += pt * pk * game.payoff[t, r]
    return total


def rsa_infer(lexicon, prior, depth: int = 1, rationality: float = 1.0) -> np.ndarray:
    """Rational-speech-act listener, rows = signals, columns = types.

    depth 0 returns the literal listener. depth 1 returns the pragmatic
    listener built on a soft-max speaker with the given rationality.
    """
    lex = np.asarray(lexicon, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    if lex.ndim != 2 or prior.shape != (lex.shape[1],):
        raise RejectedInputError("lexicon must be [signal, type] matching the prior")
    if np.any(lex.sum(axis=1) == 0):
        raise RejectedInputError("every signal must be true of at least one type")
    if depth not in (0, 1):
        raise RejectedInputError("depth must be 0 or 1")
    if rationality < 0:
        raise RejectedInputError("rationality must be non-negative")
    literal = lex * prior[None, :]
    if np.any(literal.sum(axis=1) == 0):
        raise RejectedInputError("a signal has zero prior mass over its true types")
    literal = literal / literal.sum(axis=1, keepdims=True)
    if depth == 0:
        return literal
    speaker = rsa_speaker(literal, rationality)
    pragmatic = speaker * prior[None, :]
    sums = pragmatic.sum(axis=1, keepdims=True)
    return np.divide(pragmatic, sums, out=np.zeros_like(pragmatic), where=sums > 0)


def rsa_speaker(literal_listener: np.ndarray, rationality: float) -> np.ndarray:
    """Speaker [signal, type] ∝ L0^rationality, normalized over signals per type."""
    l0 = np.asarray(literal_listener, dtype=np.float64)
    with np.errstate(divide="ignore"):
        util = np.where(l0 > 0, l0 ** rationality, 0.0)
    sums = util.sum(axis=0, keepdims=True)
    return np.divide(util, sums, out=np.zeros_like(util), where=sums > 0)


@dataclass
class ErrorRates:
    level_a_rate: float
    level_b_rate: float
    level_c_rate: float

    def as_tuple(self):
        return (self.level_a_rate, self.level_b_rate, self.level_c_rate)


def pooling_error(game: SignalingGame, policies: PolicyPair) -> float:
    """Prior mass of types whose signal is pooled and whose greedy response is suboptimal.

    Evaluated on a clean link (correct reception) by enumeration.
    """
    sender_map = policies.greedy_sender()
    receiver_map = policies.greedy_receiver()
    best = game.payoff.max(axis=1)
    counts = np.bincount(sender_map, minlength=game.n_signals)
    rate = 0.0
    for t in range(game.n_types):
        s = sender_map[t]
        if counts[s] > 1 and game.payoff[t, receiver_map[s]] < best[t]:
            rate += game.type_prior[t]
    return float(rate)


def kb_error(game: SignalingGame, sender_map, kb_true: KnowledgeBase,
             kb_used: KnowledgeBase, context_weights=None) -> float:
    """Clean-link error rate when decoding with ``kb_used`` while types follow ``kb_true``."""
    n_ctx = kb_true.n_contexts
    w = np.full(n_ctx, 1.0 / n_ctx) if context_weights is None else np.asarray(context_weights)
    best = game.payoff.max(axis=1)
    err = 0.0
    for c in range(n_ctx):
        for t, pt in enumerate(kb_true.context_prior[c]):
            if pt == 0:
                continue
            r = kb_decode(sender_map[t], c, kb_used, game, sender_map).response
            if game.payoff[t, r] < best[t]:
                err += w[c] * pt
    return float(err)


def error_decomposition(transcripts: Sequence[Transcript], game: SignalingGame,
                        policies: PolicyPair, true_kb: KnowledgeBase | None = None,
                        used_kb: KnowledgeBase | None = None,
                        context_weights=None) -> ErrorRates:
    """Split errors into channel (A), pooling (B) and knowledge mismatch (C).

    A is measured on the transcripts; B and C are exact enumerations.
    C is zero unless both a true and a used knowledge base are supplied.
    """
    if transcripts:
        level_a = sum(tr.received_signal != tr.sent_signal for tr in transcripts) / len(transcripts)
    else:
        level_a = 0.0
    level_b = pooling_error(game, policies)
    level_c = 0.0
    if true_kb is not None and used_kb is not None:
        sender_map = policies.greedy_sender()
        level_c = (kb_error(game, sender_map, true_kb, used_kb, context_weights)
                   - kb_error(game, sender_map, true_kb, true_kb, context_weights))
    return ErrorRates(float(level_a), level_b, float(level_c))


def pure_profiles(game: SignalingGame):
    """Yield every deterministic (sender_map, receiver_map) pair."""
    for smap in itertools.product(range(game.n_signals), repeat=game.n_types):
        for rmap in itertools.product(range(game.n_responses), repeat=game.n_signals):
            yield smap, rmap


def max_pure_payoff(game: SignalingGame) -> float:
    """Brute-force maximum expected payoff over all pure profiles."""
    if game.n_signals ** game.n_types * game.n_responses ** game.n_signals > MAX_ENUMERATION_CELLS:
        raise EnumerationRefusedError("too many pure profiles to enumerate")
    return max(expected_payoff(game, PolicyPair.from_maps(s, r, game.n_signals, game.n_responses))
               for s, r in pure_profiles(game))
