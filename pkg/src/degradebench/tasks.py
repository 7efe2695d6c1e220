"""Annotation-driven task generation.

Queries about a frame sequence are built from object-trajectory annotations
alone, so every task ships with a canonical answer key that needs no human in
the loop. Five template kinds cover temporal reasoning: presence,
attribute_change, disappearance, spatial_change and reidentification.
Template instances are scored by the Shannon entropy of their candidate
answers (in nats) and one is drawn through a seeded softmax, which biases
generation toward genuinely uncertain questions while staying reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import DimensionError

TASK_KINDS = (
    "presence",
    "attribute_change",
    "disappearance",
    "spatial_change",
    "reidentification",
)

# Static paraphrase table: phrasing is varied by the task seed so episodes do
# not degenerate into one literal string per kind.
_PHRASINGS = {
    "presence": (
        "is there a {label} visible in the current frame?",
        "can you see a {label} in this frame?",
        "does the current frame contain a {label}?",
    ),
    "attribute_change": (
        "has the {attr} of the {label} changed since the previous frame?",
        "did the {label}'s {attr} change between the last frame and this one?",
    ),
    "disappearance": (
        "which object that was visible in frame {ref} is no longer visible in frame {t}?",
        "what object present in frame {ref} has disappeared by frame {t}?",
    ),
    "spatial_change": (
        "has the {label} moved since the previous frame?",
        "is the {label} in a different position than in the previous frame?",
    ),
    "reidentification": (
        "is the {label} in the current frame the same {label} that appeared in frame {ref}?",
        "is this the same {label} as the one seen in frame {ref}?",
    ),
}

_MOVE_EPS = 1e-9


class AnnotationParseError(ValueError):
    """A row of the annotation file could not be parsed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class AnnotationValidationError(ValueError):
    """Parsed annotations violate a structural constraint."""


class AbsentObjectError(KeyError):
    """An object id was required in a frame where it does not appear."""


def canonical_answer(text: str) -> str:
    """Lowercase and collapse whitespace; the canonical answer-key form."""
    return " ".join(str(text).lower().split())


@dataclass(frozen=True, eq=False)
class ObjectState:
    """One object in one frame: box, class label, attributes, embedding."""

    id: str
    bbox: tuple
    label: str
    attributes: dict = field(default_factory=dict)
    appearance: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        if not self.id:
            raise AnnotationValidationError("object id must be non-empty")
        x, y, w, h = (float(v) for v in self.bbox)
        if w <= 0 or h <= 0:
            raise AnnotationValidationError(
                f"object {self.id}: bbox width/height must be positive, got {(w, h)}"
            )
        object.__setattr__(self, "bbox", (x, y, w, h))
        object.__setattr__(self, "label", canonical_answer(self.label))
        attrs = {canonical_answer(k): canonical_answer(v) for k, v in self.attributes.items()}
        object.__setattr__(self, "attributes", attrs)
        vec = np.asarray(self.appearance, dtype=np.float64).ravel()
        if not np.isfinite(vec).all():
            raise AnnotationValidationError(f"object {self.id}: appearance must be finite")
        object.__setattr__(self, "appearance", vec)


@dataclass(frozen=True, eq=False)
class FrameAnnotation:
    """All objects present at one frame index."""

    index: int
    objects: tuple = ()

    def __post_init__(self) -> None:
        if self.index < 0:
            raise AnnotationValidationError(f"frame index must be >= 0, got {self.index}")
        objects = tuple(self.objects)
        ids = [o.id for o in objects]
        if len(ids) != len(set(ids)):
            raise AnnotationValidationError(
                f"frame {self.index}: duplicate object ids {sorted(ids)}"
            )
        object.__setattr__(self, "objects", objects)

    def get(self, object_id: str):
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        return None

    def labels(self) -> set:
        return {o.label for o in self.objects}


@dataclass(frozen=True)
class Task:
    """A generated query plus its annotation-derived answer key."""

    frame: int
    kind: str
    query: str
    answer_key: str
    entropy: float
    subject: str
    aspect: str
    ref_frame: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        object.__setattr__(self, "answer_key", canonical_answer(self.answer_key))


@dataclass(frozen=True)
class TaskSettings:
    """Generation knobs; kinds can be restricted for controlled experiments."""

    kinds: tuple = TASK_KINDS
    temperature: float = 1.0
    memory_window: int = 8
    paraphrase: bool = True
    focus_boost: float = 1.0

    def __post_init__(self) -> None:
        kinds = tuple(self.kinds)
        unknown = [k for k in kinds if k not in TASK_KINDS]
        if unknown:
            raise ValueError(f"unknown task kinds: {unknown}")
        if not kinds:
            raise ValueError("at least one task kind must be enabled")
        object.__setattr__(self, "kinds", kinds)
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.memory_window < 1:
            raise ValueError(f"memory_window must be >= 1, got {self.memory_window}")
        if self.focus_boost < 0:
            raise ValueError(f"focus_boost must be >= 0, got {self.focus_boost}")


class MemoryBuffer:
    """Bounded sliding window of past frames and the tasks issued on them."""

    def __init__(self, capacity: int = 8):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._frames: list = []
        self._tasks: list = []

    @property
    def frames(self) -> tuple:
        return tuple(self._frames)

    @property
    def tasks(self) -> tuple:
        return tuple(self._tasks)

    @property
    def latest(self):
        return self._frames[-1] if self._frames else None

    def push_frame(self, annotation: FrameAnnotation) -> None:
        if self._frames and annotation.index <= self._frames[-1].index:
            raise AnnotationValidationError(
                f"frames must be pushed in increasing order, got {annotation.index} "
                f"after {self._frames[-1].index}"
            )
        self._frames.append(annotation)
        del self._frames[: -self.capacity]

    def record_task(self, task: Task) -> None:
        self._tasks.append(task)
        del self._tasks[: -self.capacity]


def ingest_annotations(
    path,
    length: int | None = None,
    frame_width: float | None = None,
    frame_height: float | None = None,
) -> list:
    """Parse a delimited annotation file into a per-frame timeline.

    Format: a header line ``d=<K>`` declaring the appearance-embedding width,
    then one comma-separated row per (frame, object):

        t, id, x, y, w, h, label, key=val;key2=val2, a_1, ..., a_K

    The attributes field may be empty. Blank lines and ``#`` comments are
    skipped. An empty file is an empty timeline. When frame bounds are given,
    boxes must lie inside them. Duplicate (t, id) pairs are rejected.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise AnnotationValidationError(f"cannot read annotation file {path}: {exc}") from exc

    dim: int | None = None
    rows: dict = {}
    seen: set = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if dim is None:
            if not line.startswith("d="):
                raise AnnotationParseError(f"expected header 'd=<int>', got {line!r}", lineno)
            try:
                dim = int(line[2:])
            except ValueError:
                raise AnnotationParseError(f"bad embedding width in header {line!r}", lineno) from None
            if dim < 0:
                raise AnnotationParseError(f"embedding width must be >= 0, got {dim}", lineno)
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 8 + dim:
            raise AnnotationParseError(
                f"expected {8 + dim} fields (t,id,x,y,w,h,label,attrs,{dim} floats), "
                f"got {len(fields)}",
                lineno,
            )
        try:
            t = int(fields[0])
            x, y, w, h = (float(v) for v in fields[2:6])
            appearance = np.array([float(v) for v in fields[8:]], dtype=np.float64)
        except ValueError as exc:
            raise AnnotationParseError(f"bad numeric field: {exc}", lineno) from None
        if t < 0:
            raise AnnotationParseError(f"frame index must be >= 0, got {t}", lineno)
        obj_id = fields[1]
        if not obj_id:
            raise AnnotationParseError("object id must be non-empty", lineno)
        if (t, obj_id) in seen:
            raise AnnotationValidationError(f"line {lineno}: duplicate (t, id) pair ({t}, {obj_id!r})")
        seen.add((t, obj_id))
        attributes = {}
        if fields[7]:
            for pair in fields[7].split(";"):
                if "=" not in pair:
                    raise AnnotationParseError(f"bad attribute pair {pair!r}", lineno)
                k, v = pair.split("=", 1)
                attributes[k.strip()] = v.strip()
        if frame_width is not None and frame_height is not None:
            if x < 0 or y < 0 or x + w > frame_width or y + h > frame_height:
                raise AnnotationValidationError(
                    f"line {lineno}: bbox {(x, y, w, h)} outside frame "
                    f"{frame_width}x{frame_height}"
                )
        try:
            state = ObjectState(
                id=obj_id, bbox=(x, y, w, h), label=fields[6],
                attributes=attributes, appearance=appearance,
            )
        except AnnotationValidationError as exc:
            raise AnnotationValidationError(f"line {lineno}: {exc}") from None
        rows.setdefault(t, []).append(state)

    if not rows and length is None:
        return []
    last = (length - 1) if length is not None else max(rows)
    if length is not None and rows and max(rows) > last:
        raise AnnotationValidationError(
            f"annotations reference frame {max(rows)} beyond timeline length {length}"
        )
    return [FrameAnnotation(index=t, objects=tuple(rows.get(t, ()))) for t in range(last + 1)]


def delta_bbox(prev: FrameAnnotation, cur: FrameAnnotation, object_id: str) -> tuple:
    """Componentwise bbox difference (dx, dy, dw, dh) of one object."""
    a = prev.get(object_id)
    b = cur.get(object_id)
    if a is None:
        raise AbsentObjectError(f"object {object_id!r} absent from frame {prev.index}")
    if b is None:
        raise AbsentObjectError(f"object {object_id!r} absent from frame {cur.index}")
    return tuple(bv - av for av, bv in zip(a.bbox, b.bbox))


def appearance_drift(prev: FrameAnnotation, cur: FrameAnnotation, object_id: str) -> float:
    """Euclidean distance between an object's embeddings in two frames."""
    a = prev.get(object_id)
    b = cur.get(object_id)
    if a is None:
        raise AbsentObjectError(f"object {object_id!r} absent from frame {prev.index}")
    if b is None:
        raise AbsentObjectError(f"object {object_id!r} absent from frame {cur.index}")
    if a.appearance.shape != b.appearance.shape:
        raise DimensionError(
            f"appearance width mismatch for {object_id!r}: "
            f"{a.appearance.shape} vs {b.appearance.shape}"
        )
    return float(np.linalg.norm(b.appearance - a.appearance))


def semantic_entropy(candidates) -> float:
    """Shannon entropy in nats of a weighted candidate-answer set.

    Weights for identical answers are pooled before normalizing. Zero-weight
    answers contribute nothing (0 * log 0 = 0); negative weights and an
    all-zero total are rejected.
    """
    pooled: dict = {}
    for answer, weight in candidates:
        weight = float(weight)
        if weight < 0:
            raise ValueError(f"candidate weight must be >= 0, got {weight}")
        key = canonical_answer(answer)
        pooled[key] = pooled.get(key, 0.0) + weight
    total = sum(pooled.values())
    if total <= 0:
        raise ValueError("candidate weights sum to zero")
    entropy = 0.0
    for weight in pooled.values():
        # guard on the normalized probability: a subnormal weight can be
        # positive yet underflow to p == 0 after the division
        p = weight / total
        if p > 0:
            entropy -= p * math.log(p)
    return entropy


@dataclass(frozen=True)
class _Candidate:
    kind: str
    subject: str
    aspect: str
    ref_frame: int | None
    answer_key: str
    entropy: float
    fmt: dict


def _presence_candidates(history, frame):
    labels = sorted({label for f in history for label in f.labels()})
    out = []
    for label in labels:
        present = sum(1 for f in history if label in f.labels())
        absent = len(history) - present
        entropy = semantic_entropy([("yes", present), ("no", absent)])
        key = "yes" if label in frame.labels() else "no"
        out.append(
            _Candidate("presence", label, "presence", None, key, entropy, {"label": label})
        )
    return out


def _attribute_candidates(history, frame, prev):
    out = []
    if prev is None:
        return out
    for obj in sorted(frame.objects, key=lambda o: o.id):
        before = prev.get(obj.id)
        if before is None:
            continue
        for attr in sorted(set(obj.attributes) & set(before.attributes)):
            old = before.attributes[attr]
            new = obj.attributes[attr]
            key = "no" if old == new else f"yes, {old} to {new}"
            values = []
            for f in history:
                state = f.get(obj.id)
                if state is not None and attr in state.attributes:
                    values.append(state.attributes[attr])
            entropy = semantic_entropy([(v, 1) for v in values])
            out.append(
                _Candidate(
                    "attribute_change", obj.id, attr, None, key, entropy,
                    {"label": obj.label, "attr": attr},
                )
            )
    return out


def _disappearance_candidates(memory_frames, frame):
    out = []
    for past in memory_frames:
        gone = [o for o in past.objects if frame.get(o.id) is None]
        if len(gone) != 1:
            # zero: nothing to ask; several: the answer would be ambiguous
            continue
        target = gone[0]
        entropy = semantic_entropy([(o.label, 1) for o in past.objects])
        out.append(
            _Candidate(
                "disappearance", target.id, "identity", past.index, target.label,
                entropy, {"ref": past.index, "t": frame.index},
            )
        )
    return out


def _spatial_candidates(history, frame, prev):
    out = []
    if prev is None:
        return out
    for obj in sorted(frame.objects, key=lambda o: o.id):
        if prev.get(obj.id) is None:
            continue
        dx, dy, _dw, _dh = delta_bbox(prev, frame, obj.id)
        key = "yes" if (abs(dx) > _MOVE_EPS or abs(dy) > _MOVE_EPS) else "no"
        flags = []
        for earlier, later in zip(history, history[1:]):
            if earlier.get(obj.id) is not None and later.get(obj.id) is not None:
                mx, my, _, _ = delta_bbox(earlier, later, obj.id)
                flags.append("yes" if (abs(mx) > _MOVE_EPS or abs(my) > _MOVE_EPS) else "no")
        entropy = semantic_entropy([(f, 1) for f in flags]) if flags else 0.0
        out.append(
            _Candidate(
                "spatial_change", obj.id, "position", None, key, entropy,
                {"label": obj.label},
            )
        )
    return out


def _reidentification_candidates(memory_frames, history, frame):
    out = []
    current_by_label: dict = {}
    for obj in frame.objects:
        current_by_label.setdefault(obj.label, []).append(obj)
    for label in sorted(current_by_label):
        holders = current_by_label[label]
        if len(holders) != 1:
            continue
        current = holders[0]
        anchor = None
        for past in memory_frames:
            earlier = [o for o in past.objects if o.label == label]
            if len(earlier) == 1:
                anchor = (past.index, earlier[0])
                break
        if anchor is None:
            continue
        ref_index, past_obj = anchor
        key = "yes" if past_obj.id == current.id else "no"
        carriers = [o.id for f in history for o in f.objects if o.label == label]
        entropy = semantic_entropy([(i, 1) for i in carriers])
        out.append(
            _Candidate(
                "reidentification", label, "identity", ref_index, key, entropy,
                {"label": label, "ref": ref_index},
            )
        )
    return out


def generate_query(
    memory: MemoryBuffer,
    frame: FrameAnnotation,
    seed: int,
    uncertainty_focus=None,
    settings: TaskSettings | None = None,
) -> Task | None:
    """Draw one task for ``frame`` against the memory window, or None.

    Candidates from every enabled template are scored by semantic entropy
    (plus a boost for aspects named in ``uncertainty_focus``) and one is
    sampled through a seeded softmax. The issued task is recorded in memory.
    Returns None when no template applies, which is a normal no-task turn
    rather than an error.
    """
    settings = settings or TaskSettings()
    focus = {canonical_answer(a) for a in (uncertainty_focus or ())}
    for past in memory.frames:
        if past.index >= frame.index:
            raise AnnotationValidationError(
                f"memory holds frame {past.index} not strictly before current {frame.index}"
            )
    history = list(memory.frames) + [frame]
    prev = memory.latest

    candidates: list = []
    builders = {
        "presence": lambda: _presence_candidates(history, frame),
        "attribute_change": lambda: _attribute_candidates(history, frame, prev),
        "disappearance": lambda: _disappearance_candidates(memory.frames, frame),
        "spatial_change": lambda: _spatial_candidates(history, frame, prev),
        "reidentification": lambda: _reidentification_candidates(memory.frames, history, frame),
    }
    for kind in TASK_KINDS:
        if kind in settings.kinds:
            candidates.extend(builders[kind]())
    if not candidates:
        return None

    candidates.sort(key=lambda c: (c.kind, c.subject, c.aspect, -1 if c.ref_frame is None else c.ref_frame))
    scores = np.array(
        [c.entropy + (settings.focus_boost if c.aspect in focus else 0.0) for c in candidates]
    )
    logits = scores / settings.temperature
    weights = np.exp(logits - logits.max())
    probs = weights / weights.sum()

    rng = np.random.default_rng(seed)
    chosen = candidates[int(rng.choice(len(candidates), p=probs))]
    phrasings = _PHRASINGS[chosen.kind]
    phrasing = phrasings[int(rng.integers(len(phrasings)))] if settings.paraphrase else phrasings[0]
    task = Task(
        frame=frame.index,
        kind=chosen.kind,
        query=phrasing.format(**chosen.fmt),
        answer_key=chosen.answer_key,
        entropy=float(chosen.entropy),
        subject=chosen.subject,
        aspect=chosen.aspect,
        ref_frame=chosen.ref_frame,
    )
    memory.record_task(task)
    return task
