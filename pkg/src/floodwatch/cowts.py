"""Content-word tweet summarization as a 0-1 integer linear program.

Variables: ``x_i`` selects tweet ``i``, ``y_j`` selects content word ``j``.

    maximize    sum_i x_i + sum_j score_j * y_j
    subject to  sum_i length_i * x_i <= L                    (C1: budget)
                y_j <= sum_{i in T_j} x_i       for all j    (C2: word needs a tweet)
                x_i = 1  =>  y_j = 1  for j in C_i           (C3: tweet brings its words)

For a fixed ``x`` the best feasible ``y`` is the coverage closure
``y_j = 1 iff some selected tweet contains j``: C3 forces those words on,
C2 forbids any other word, and scores are non-negative. The search is
therefore over ``x`` alone.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

from floodwatch.errors import (
    DimensionMismatch,
    EmptyCorpus,
    ExactnessCapExceeded,
    InfeasibleSolution,
)
from floodwatch.tweets import ContentWord, TweetRecord

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 250
DEFAULT_EXACT_CAP = 24
DEFAULT_NODE_CAP = 10 ** 6
_TOL = 1e-9


@dataclass(frozen=True)
class IlpInstance:
    lengths: tuple[int, ...]
    scores: tuple[float, ...]
    tweet_words: tuple[tuple[int, ...], ...]   # C_i
    word_tweets: tuple[tuple[int, ...], ...]   # T_j
    budget: int
    terms: tuple[str, ...] = ()

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if any(s < 0 for s in self.scores):
            raise ValueError("content-word scores must be non-negative")
        if len(self.tweet_words) != len(self.lengths) or len(self.word_tweets) != len(self.scores):
            raise DimensionMismatch("incidence lists do not match variable counts")
        pairs_c = {(i, j) for i, ws in enumerate(self.tweet_words) for j in ws}
        pairs_t = {(i, j) for j, ts in enumerate(self.word_tweets) for i in ts}
        if pairs_c != pairs_t:
            raise ValueError("tweet->word and word->tweet incidence disagree")

    @property
    def n(self) -> int:
        return len(self.lengths)

    @property
    def m(self) -> int:
        return len(self.scores)

    @classmethod
    def from_tweet_words(cls, lengths, scores, tweet_words, budget, terms=()) -> "IlpInstance":
        word_tweets = [[] for _ in scores]
        for i, ws in enumerate(tweet_words):
            for j in ws:
                word_tweets[j].append(i)
        return cls(tuple(lengths), tuple(float(s) for s in scores),
                   tuple(tuple(sorted(set(ws))) for ws in tweet_words),
                   tuple(tuple(ts) for ts in word_tweets), int(budget), tuple(terms))

    def with_budget(self, budget: int) -> "IlpInstance":
        return IlpInstance(self.lengths, self.scores, self.tweet_words, self.word_tweets,
                           budget, self.terms)


@dataclass
class IlpSolution:
    x: list[int]
    y: list[int]
    objective: float
    proven_optimal: bool
    nodes: int = field(default=0, compare=False)

    def to_dict(self) -> dict:
        return {"x": list(self.x), "y": list(self.y), "objective": self.objective,
                "proven_optimal": self.proven_optimal}

    @classmethod
    def from_dict(cls, d: dict) -> "IlpSolution":
        return cls([int(v) for v in d["x"]], [int(v) for v in d["y"]], float(d["objective"]),
                   bool(d["proven_optimal"]))


@dataclass
class Feasibility:
    violations: list[str]

    def __bool__(self) -> bool:
        return not self.violations


def build_instance(records: Sequence[TweetRecord], words: Sequence[ContentWord],
                   budget: int = DEFAULT_BUDGET) -> IlpInstance:
    """Tweet lengths are token counts of the cleaned text."""
    if not records:
        raise EmptyCorpus("no tweets to summarize")
    tweet_words = [[] for _ in records]
    for j, w in enumerate(words):
        for i in w.tweets:
            tweet_words[i].append(j)
    return IlpInstance.from_tweet_words([len(r.tokens) for r in records],
                                        [w.score for w in words], tweet_words, budget,
                                        [w.term for w in words])


def closure(x: Sequence[int], inst: IlpInstance) -> list[int]:
    """Best ``y`` for a given ``x``: exactly the words of the selected tweets."""
    y = [0] * inst.m
    for i, xi in enumerate(x):
        if xi:
            for j in inst.tweet_words[i]:
                y[j] = 1
    return y


def objective(x: Sequence[int], y: Sequence[int], inst: IlpInstance) -> float:
    return float(sum(x)) + math.fsum(s for s, yj in zip(inst.scores, y) if yj)


def feasible(sol: IlpSolution, inst: IlpInstance) -> Feasibility:
    if len(sol.x) != inst.n or len(sol.y) != inst.m:
        raise DimensionMismatch(
            f"solution has {len(sol.x)}x/{len(sol.y)}y, instance {inst.n}x/{inst.m}y")
    bad = []
    used = sum(l for l, xi in zip(inst.lengths, sol.x) if xi)
    if used > inst.budget:
        bad.append(f"C1: selected length {used} exceeds budget {inst.budget}")
    for j, yj in enumerate(sol.y):
        if yj and not any(sol.x[i] for i in inst.word_tweets[j]):
            bad.append(f"C2: word {j} selected without a containing tweet")
    for i, xi in enumerate(sol.x):
        if xi:
            missing = [j for j in inst.tweet_words[i] if not sol.y[j]]
            if missing:
                bad.append(f"C3: tweet {i} selected but words {missing} are not")
    return Feasibility(bad)


def _solution(x, inst, proven, nodes=0) -> IlpSolution:
    y = closure(x, inst)
    return IlpSolution(list(x), y, objective(x, y, inst), proven, nodes)


def solve_greedy(inst: IlpInstance) -> IlpSolution:
    """Repeatedly add the fitting tweet with the best marginal gain per token."""
    x = [0] * inst.n
    covered = [False] * inst.m
    room = inst.budget
    while True:
        best, best_rate = None, -1.0
        for i in range(inst.n):
            if x[i] or inst.lengths[i] > room:
                continue
            gain = 1.0 + sum(inst.scores[j] for j in inst.tweet_words[i] if not covered[j])
            rate = math.inf if inst.lengths[i] == 0 else gain / inst.lengths[i]
            if rate > best_rate:
                best, best_rate = i, rate
        if best is None:
            break
        x[best] = 1
        room -= inst.lengths[best]
        for j in inst.tweet_words[best]:
            covered[j] = True
    return _solution(x, inst, proven=False)


def _fractional_count(lengths: list[int], room: int) -> float:
    """Max number of items fitting in ``room`` when items may be taken fractionally."""
    total = 0.0
    for length in sorted(lengths):
        if length <= room:
            total += 1.0
            room -= length
        else:
            total += room / length
            break
    return total


def _beats(value: float) -> float:
    return value + _TOL * max(1.0, abs(value))


def _branch_and_bound(inst: IlpInstance, node_cap: int) -> tuple[list[int], int]:
    n = inst.n
    x = [0] * n
    cover = [0] * inst.m          # how many selected tweets contain word j
    best_x: list[int] | None = None
    best_val = -math.inf
    nodes = 0

    def bound(k: int, room: int, value: float) -> float:
        cand = [i for i in range(k, n) if inst.lengths[i] <= room]
        reach = {j for i in cand for j in inst.tweet_words[i] if not cover[j]}
        return value + _fractional_count([inst.lengths[i] for i in cand], room) + \
            sum(inst.scores[j] for j in reach)

    # Depth-first, x_k = 0 branch first: leaves come in lexicographic order,
    # and only strict improvements replace the incumbent, so the returned
    # optimum is the lexicographically smallest one.
    def visit(k: int, room: int, value: float) -> None:
        nonlocal best_x, best_val, nodes
        nodes += 1
        if nodes > node_cap:
            raise ExactnessCapExceeded(f"node cap {node_cap} reached")
        if k == n:
            exact = objective(x, closure(x, inst), inst)
            if best_x is None or exact > _beats(best_val):
                best_val, best_x = exact, x[:]
            return
        if best_x is not None and bound(k, room, value) <= _beats(best_val):
            return
        visit(k + 1, room, value)
        if inst.lengths[k] <= room:
            x[k] = 1
            gain = 1.0
            for j in inst.tweet_words[k]:
                if cover[j] == 0:
                    gain += inst.scores[j]
                cover[j] += 1
            visit(k + 1, room - inst.lengths[k], value + gain)
            for j in inst.tweet_words[k]:
                cover[j] -= 1
            x[k] = 0

    visit(0, inst.budget, 0.0)
    return best_x, nodes


def solve_exact(inst: IlpInstance, exact_cap: int = DEFAULT_EXACT_CAP,
                node_cap: int = DEFAULT_NODE_CAP, fallback: bool = True) -> IlpSolution:
    """Branch and bound over tweet selections.

    The bound at a node adds, to the value so far, a fractional-knapsack
    count of the remaining tweets that still fit plus the score of every
    uncovered word those tweets could reach. Instances with more than
    ``exact_cap`` tweets, or searches exceeding ``node_cap`` nodes, fall back
    to :func:`solve_greedy` (``proven_optimal=False``) unless ``fallback`` is
    False, in which case :class:`ExactnessCapExceeded` propagates.
    """
    try:
        if inst.n > exact_cap:
            raise ExactnessCapExceeded(f"{inst.n} tweets exceed exactness cap {exact_cap}")
        x, nodes = _branch_and_bound(inst, node_cap)
    except ExactnessCapExceeded as exc:
        if not fallback:
            raise
        log.warning("%s; using greedy selection", exc)
        return solve_greedy(inst)
    return _solution(x, inst, proven=True, nodes=nodes)


def render_summary(sol: IlpSolution, records: Sequence[TweetRecord],
                   inst: IlpInstance | None = None) -> list[str]:
    """Raw text of the selected tweets in corpus order."""
    if len(sol.x) != len(records):
        raise DimensionMismatch("solution and corpus sizes differ")
    if inst is not None:
        check = feasible(sol, inst)
        if not check:
            raise InfeasibleSolution("; ".join(check.violations))
    return [r.raw_text for r, xi in zip(records, sol.x) if xi]
