"""Transcript scoring: answer judging and the three benchmark metrics.

All metrics are percentages. A metric whose denominator is empty raises
UndefinedMetricError rather than inventing a value; callers that persist
summaries record such metrics as null.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


class UndefinedMetricError(ValueError):
    """The metric's denominator is empty; there is nothing to measure."""


class ConstraintResolutionError(ValueError):
    """A temporal constraint references turns the transcript does not have."""


def normalize_answer(text: str, aliases=None) -> str:
    """Lowercase, strip punctuation, collapse whitespace, map aliases.

    Aliases are applied per token after normalization, so an alias table of
    {"automobile": "car"} makes "A red automobile." match "red car".
    """
    tokens = str(text).lower().translate(_PUNCT_TABLE).split()
    if aliases:
        mapped = {normalize_answer(k): normalize_answer(v) for k, v in aliases.items()}
        tokens = [mapped.get(t, t) for t in tokens]
    return " ".join(tokens)


def judge(model_answer, answer_key: str, aliases=None) -> bool:
    """Validity of a model answer against its canonical key.

    Keys whose first token is yes/no are matched on the leading token of the
    model answer, so "Yes." passes against "yes, red to blue". Entity keys
    require the full normalized strings to match, modulo aliases. An empty
    or missing model answer is always invalid.
    """
    key = normalize_answer(answer_key, aliases)
    if not key:
        raise ValueError("answer key must be non-empty")
    if model_answer is None:
        return False
    answer = normalize_answer(model_answer, aliases)
    if not answer:
        return False
    key_head = key.split()[0]
    if key_head in ("yes", "no"):
        return answer.split()[0] == key_head
    return answer == key


@dataclass(frozen=True)
class Turn:
    """One judged question-answer exchange."""

    frame: int
    query: str
    answer_key: str
    model_answer: str
    valid: bool
    error_id: str | None = None
    correction_of: str | None = None


@dataclass(frozen=True)
class Transcript:
    """An episode's judged turns in frame order."""

    turns: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        turns = tuple(self.turns)
        frames = [t.frame for t in turns]
        if any(b < a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"turn frames must be non-decreasing, got {frames}")
        known: set = set()
        for turn in turns:
            if turn.correction_of is not None and turn.correction_of not in known:
                raise ValueError(
                    f"turn at frame {turn.frame} corrects unknown error {turn.correction_of!r}"
                )
            if turn.error_id is not None:
                known.add(turn.error_id)
        object.__setattr__(self, "turns", turns)


@dataclass(frozen=True)
class TemporalConstraint:
    """A temporal-logic check over a transcript.

    Kinds:
      * before / after: subjects are two turn positions; satisfied when both
        referenced turns are judged valid and their frames are ordered as
        claimed.
      * unchanged-between: subject is an answer key; satisfied when every
        turn in the frame window sharing that key got the same (normalized)
        model answer.
    """

    cid: str
    kind: str
    subjects: tuple
    window: tuple

    def __post_init__(self) -> None:
        if self.kind not in ("before", "after", "unchanged-between"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        lo, hi = self.window
        if lo > hi:
            raise ValueError(f"constraint window must have lo <= hi, got {self.window}")
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "window", (int(lo), int(hi)))


def hallucination_rate(transcript: Transcript) -> float:
    """Percentage of judged turns whose answer was invalid."""
    turns = transcript.turns
    if not turns:
        raise UndefinedMetricError("hallucination rate over an empty transcript")
    valid = sum(1 for t in turns if t.valid)
    return 100.0 * (1.0 - valid / len(turns))


def recovery_rate(transcript: Transcript) -> float:
    """Percentage of initial errors whose final re-query came back valid.

    An initial error is a turn carrying ``error_id``. Its outcome is read
    from the last later turn referencing it, either through an explicit
    ``correction_of`` link or by re-querying the same fact (same answer
    key). An error that is never revisited counts as uncorrected. With no
    errors at all the metric is undefined.
    """
    turns = transcript.turns
    errors = [(i, t) for i, t in enumerate(turns) if t.error_id is not None]
    if not errors:
        raise UndefinedMetricError("recovery rate with zero initial errors")
    corrected = 0
    for index, error_turn in errors:
        final = None
        for later in turns[index + 1 :]:
            if later.correction_of == error_turn.error_id or later.answer_key == error_turn.answer_key:
                final = later
        if final is not None and final.valid:
            corrected += 1
    return 100.0 * corrected / len(errors)


def _check_unchanged(transcript: Transcript, constraint: TemporalConstraint) -> bool:
    (key,) = constraint.subjects
    lo, hi = constraint.window
    answers = [
        normalize_answer(t.model_answer)
        for t in transcript.turns
        if t.answer_key == key and lo <= t.frame <= hi
    ]
    if not answers:
        raise ConstraintResolutionError(
            f"constraint {constraint.cid}: no turns with key {key!r} in frames {lo}..{hi}"
        )
    return all(a == answers[0] for a in answers)


def _check_ordering(transcript: Transcript, constraint: TemporalConstraint) -> bool:
    a, b = constraint.subjects
    n = len(transcript.turns)
    if not (0 <= a < n and 0 <= b < n):
        raise ConstraintResolutionError(
            f"constraint {constraint.cid}: turn positions {constraint.subjects} "
            f"out of range for {n} turns"
        )
    first, second = transcript.turns[a], transcript.turns[b]
    if constraint.kind == "before":
        ordered = first.frame < second.frame
    else:
        ordered = first.frame > second.frame
    return ordered and first.valid and second.valid


def temporal_consistency(transcript: Transcript, constraints) -> float:
    """Percentage of temporal constraints the transcript satisfies."""
    constraints = list(constraints)
    if not constraints:
        raise UndefinedMetricError("temporal consistency with no constraints")
    satisfied = 0
    for constraint in constraints:
        if constraint.kind == "unchanged-between":
            ok = _check_unchanged(transcript, constraint)
        else:
            ok = _check_ordering(transcript, constraint)
        satisfied += bool(ok)
    return 100.0 * satisfied / len(constraints)
