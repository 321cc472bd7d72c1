"""Prompt assembly, trajectory serialization and QA generation.

Trajectories serialize to the fixed "[PT, (+0.76, +0.02), ...]" format (two
decimals, explicit signs). Prompts render byte-stably from a caption block,
the simulated decision/trajectory/verdict blocks and the expert block with
its attention tree. Five conversation types are generated either by a
deterministic template generator or through a pluggable LLM backend with a
template fallback.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

from .attention import AttentionTree, render_attention_tree
from .backends import BackendError, LlmBackend, TemplateBackend
from .checklist import (
    CATEGORY_COLLISION,
    CATEGORY_DRIVABLE,
    CATEGORY_RED_LIGHT,
    CounterfactualVerdict,
    ViolationKind,
)
from .scene import Trajectory, Waypoint

TEMPLATE_VERSION = "1.0"


class TrajectoryFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (offset {offset})")


def _fmt2(v: float) -> str:
    r = round(v, 2) + 0.0  # kill negative zero
    return f"{r:+.2f}"


def serialize_trajectory(traj: Trajectory) -> str:
    """Render waypoints as "[PT, (+x.xx, +y.yy), ...]"."""
    parts = "".join(f", ({_fmt2(w.x)}, {_fmt2(w.y)})" for w in traj.waypoints)
    return f"[PT{parts}]"


_NUMBER = r"[+-]?\d+(?:\.\d+)?"
_POINT_RE = re.compile(rf"\s*,\s*\(\s*({_NUMBER})\s*,\s*({_NUMBER})\s*\)")


def parse_trajectory(text: str, period: float = 0.5, lenient: bool = True) -> Trajectory:
    """Inverse of :func:`serialize_trajectory`; waypoints get the default period.

    Lenient mode tolerates surrounding whitespace and a trailing period.
    """
    s = text
    pos = 0
    if lenient:
        while pos < len(s) and s[pos].isspace():
            pos += 1
    if not s.startswith("[PT", pos):
        raise TrajectoryFormatError("expected '[PT' prefix", pos)
    pos += 3

    points: list[tuple[float, float]] = []
    while True:
        m = _POINT_RE.match(s, pos)
        if not m:
            break
        points.append((float(m.group(1)), float(m.group(2))))
        pos = m.end()

    close = re.compile(r"\s*\]" if lenient else r"\]").match(s, pos)
    if not close:
        raise TrajectoryFormatError("expected ', (x, y)' or ']'", pos)
    pos = close.end()
    if lenient:
        tail = s[pos:].strip()
        if tail not in ("", "."):
            raise TrajectoryFormatError(f"unexpected trailing text {tail[:20]!r}", pos)
    elif pos != len(s):
        raise TrajectoryFormatError("unexpected trailing text", pos)

    if not points:
        raise TrajectoryFormatError("empty trajectory", pos)
    return Trajectory(
        tuple(Waypoint((i + 1) * period, x, y) for i, (x, y) in enumerate(points)),
        period=period,
    )


def verdict_text(verdict: CounterfactualVerdict) -> str:
    """Human-readable outcome line used in prompts ("Safe", "Out of the drivable area", ...)."""
    if verdict.safe:
        return "Safe"
    phrases = []
    for v in verdict.violations:
        if v.kind is ViolationKind.COLLISION:
            phrase = f"Collision with {v.culprit}" if v.culprit else "Collision"
        elif v.kind is ViolationKind.OUT_OF_DRIVABLE:
            phrase = "Out of the drivable area"
        else:
            phrase = "Running a red light"
        if phrase not in phrases:
            phrases.append(phrase)
    return "; ".join(phrases)


@dataclass(frozen=True)
class SimulatedBlock:
    decision: str
    trajectory_text: str
    verdict: str


@dataclass(frozen=True)
class ExpertBlock:
    decision: str
    trajectory_text: str
    attention_text: str


@dataclass(frozen=True)
class PromptContext:
    expert: ExpertBlock
    simulated: tuple[SimulatedBlock, ...] = ()
    caption: str | None = None


def build_prompt_context(
    expert_traj: Trajectory,
    expert_verdict: CounterfactualVerdict,
    tree: AttentionTree,
    candidates: Sequence[tuple[Trajectory, CounterfactualVerdict]] = (),
    caption: str | None = None,
) -> PromptContext:
    simulated = tuple(
        SimulatedBlock(
            decision=v.decision.decision_string(),
            trajectory_text=serialize_trajectory(t),
            verdict=verdict_text(v),
        )
        for t, v in candidates
    )
    expert = ExpertBlock(
        decision=expert_verdict.decision.decision_string(),
        trajectory_text=serialize_trajectory(expert_traj),
        attention_text=render_attention_tree(tree),
    )
    return PromptContext(expert=expert, simulated=simulated, caption=caption)


def render_prompt(ctx: PromptContext) -> str:
    """Byte-stable prompt rendering: caption, simulated blocks, expert block."""
    blocks = []
    if ctx.caption:
        blocks.append(ctx.caption)
    for sim in ctx.simulated:
        blocks.append(
            f"Simulated decision: {sim.decision}\n"
            f"Simulated trajectory: {sim.trajectory_text}.\n"
            f"{sim.verdict}"
        )
    expert = (
        f"Expert decision: {ctx.expert.decision}\n"
        f"Expert trajectory: {ctx.expert.trajectory_text}."
    )
    if ctx.expert.attention_text:
        expert += f"\nObjects need attention:\n{ctx.expert.attention_text}"
    blocks.append(expert)
    return "\n\n".join(blocks) + "\n"


class ConversationType(str, Enum):
    SCENE_DESCRIPTION = "scene_description"
    ATTENTION = "attention"
    COUNTERFACTUAL = "counterfactual"
    PLANNING = "planning"
    GENERAL = "general"


ALL_TYPES = tuple(ConversationType)

REVIEW_STATES = ("pending", "accepted", "rejected", "edited")


@dataclass(frozen=True)
class Provenance:
    scene_id: str
    trajectory_ids: tuple[str, ...]
    backend: str
    template_version: str
    fallback_reason: str | None = None


@dataclass(frozen=True)
class QAItem:
    id: str
    conversation_type: ConversationType
    question: str
    answer: str
    provenance: Provenance
    review_state: str = "pending"
    edited_answer: str | None = None

    def __post_init__(self) -> None:
        if not self.question or not self.answer:
            raise ValueError("question and answer must be non-empty")
        if self.review_state not in REVIEW_STATES:
            raise ValueError(f"unknown review state {self.review_state!r}")

    def final_answer(self) -> str:
        return self.edited_answer if self.review_state == "edited" else self.answer

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "conversation_type": self.conversation_type.value,
            "question": self.question,
            "answer": self.answer,
            "provenance": {
                "scene_id": self.provenance.scene_id,
                "trajectory_ids": list(self.provenance.trajectory_ids),
                "backend": self.provenance.backend,
                "template_version": self.provenance.template_version,
                "fallback_reason": self.provenance.fallback_reason,
            },
            "review_state": self.review_state,
            "edited_answer": self.edited_answer,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "QAItem":
        p = doc["provenance"]
        return cls(
            id=doc["id"],
            conversation_type=ConversationType(doc["conversation_type"]),
            question=doc["question"],
            answer=doc["answer"],
            provenance=Provenance(
                scene_id=p["scene_id"],
                trajectory_ids=tuple(p["trajectory_ids"]),
                backend=p["backend"],
                template_version=p["template_version"],
                fallback_reason=p.get("fallback_reason"),
            ),
            review_state=doc.get("review_state", "pending"),
            edited_answer=doc.get("edited_answer"),
        )


def write_qa_jsonl(items: Sequence[QAItem], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(), sort_keys=True) + "\n")


def read_qa_jsonl(path) -> list[QAItem]:
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                items.append(QAItem.from_dict(json.loads(line)))
    return items


# --- template generators ---------------------------------------------------

_ATTENTION_LINE = re.compile(r"\|--- (?!.*\[)(.+ at \([^)]*\))")


def _attention_entries(attention_text: str) -> list[str]:
    """Pull "category at (x, y)" lines (children and orphans) out of a tree rendering."""
    entries = []
    for line in attention_text.splitlines():
        stripped = line.replace("|   ", "").strip()
        if stripped.startswith("|--- ") and " at (" in stripped:
            entries.append(stripped[len("|--- ") :])
    return entries


def _template_scene_description(ctx: PromptContext) -> tuple[str, str]:
    question = "Describe the current driving scene."
    if ctx.caption:
        return question, ctx.caption
    return question, (
        f"The ego vehicle is driving with the decision: {ctx.expert.decision}. "
        "No scene caption is available for this sample."
    )


def _template_attention(ctx: PromptContext) -> tuple[str, str]:
    question = "What traffic elements should I be aware of while driving in this area?"
    entries = _attention_entries(ctx.expert.attention_text)
    if not entries:
        return question, "There are no objects that need special attention near the planned route."
    return question, "Watch for the following objects: " + "; ".join(entries) + "."


def _counterfactual_question(decision: str) -> str:
    return f'If I choose the maneuver "{decision}", what could be the consequences?'


def _template_counterfactual(verdict: CounterfactualVerdict) -> str:
    """Answer wording is keyword-exact: it mentions precisely the verdict categories."""
    if verdict.safe:
        return (
            "This maneuver is safe. It keeps a comfortable margin to every nearby "
            "object and complies with the traffic signals."
        )
    sentences = ["This maneuver is not advisable."]
    categories_seen = []
    for v in verdict.violations:
        cat = v.kind.category
        if cat in categories_seen:
            continue
        categories_seen.append(cat)
        if cat == CATEGORY_COLLISION:
            who = f" with {v.culprit}" if v.culprit else ""
            sentences.append(f"It could lead to a collision{who}.")
        elif cat == CATEGORY_DRIVABLE:
            sentences.append("It would take the vehicle out of the drivable area.")
        elif cat == CATEGORY_RED_LIGHT:
            sentences.append("It would mean running a red light.")
    return " ".join(sentences)


def _template_planning(ctx: PromptContext) -> tuple[str, str]:
    question = "What should be my next action given the current driving situation, and why?"
    answer = (
        f"The most suitable trajectory to follow would be {ctx.expert.trajectory_text}. "
        f"This trajectory follows the expert decision ({ctx.expert.decision}) and passed "
        "every rule check against the current scene."
    )
    return question, answer


def _template_general(ctx: PromptContext) -> tuple[str, str]:
    question = "How many objects need attention along the planned route?"
    n = len(_attention_entries(ctx.expert.attention_text))
    noun = "object needs" if n == 1 else "objects need"
    return question, f"{n} {noun} attention along the planned route."


def _backend_answer(
    backend: LlmBackend, ctx: PromptContext, question: str, instruction: str
) -> str:
    messages = [
        ("system", instruction),
        ("user", f"{render_prompt(ctx)}\n{question}"),
    ]
    answer = backend.complete(messages).strip()
    if not answer:
        raise BackendError("backend returned an empty answer")
    return answer


def generate_qa(
    ctx: PromptContext,
    verdicts: Sequence[CounterfactualVerdict],
    backend: LlmBackend | None = None,
    *,
    scene_id: str,
    enabled: Sequence[ConversationType] = ALL_TYPES,
    keyword_extractor=None,
    max_retries: int = 1,
) -> list[QAItem]:
    """Generate QA items for one scene.

    ``verdicts`` align with ``ctx.simulated`` (one per candidate). With the
    template backend all answers are deterministic; with an LLM backend,
    counterfactual answers that omit a ground-truth category keyword are
    retried and then replaced by the template answer. Backend failures fall
    back to templates with the reason recorded in provenance.
    """
    backend = backend or TemplateBackend()
    if len(verdicts) != len(ctx.simulated):
        raise ValueError("need exactly one verdict per simulated block")
    if keyword_extractor is None:
        from .metrics import extract_keywords

        keyword_extractor = extract_keywords
    use_templates = isinstance(backend, TemplateBackend)
    enabled = tuple(enabled)

    items: list[QAItem] = []

    def provenance(trajectory_ids: tuple[str, ...] = (), fallback: str | None = None) -> Provenance:
        name = "template" if (use_templates or fallback) else backend.name
        return Provenance(scene_id, trajectory_ids, name, TEMPLATE_VERSION, fallback)

    def make(conv: ConversationType, question: str, template_answer: str,
             instruction: str, trajectory_ids: tuple[str, ...] = ()) -> QAItem:
        index = sum(1 for it in items if it.conversation_type is conv)
        item_id = f"{scene_id}:{conv.value}:{index:02d}"
        if use_templates:
            return QAItem(item_id, conv, question, template_answer, provenance(trajectory_ids))
        try:
            answer = _backend_answer(backend, ctx, question, instruction)
            return QAItem(item_id, conv, question, answer, provenance(trajectory_ids))
        except BackendError as exc:
            return QAItem(
                item_id, conv, question, template_answer,
                provenance(trajectory_ids, fallback=str(exc)),
            )

    if ConversationType.SCENE_DESCRIPTION in enabled:
        q, a = _template_scene_description(ctx)
        items.append(make(
            ConversationType.SCENE_DESCRIPTION, q, a,
            "Describe the driving scene for the driver in two or three sentences.",
        ))

    if ConversationType.ATTENTION in enabled:
        q, a = _template_attention(ctx)
        items.append(make(
            ConversationType.ATTENTION, q, a,
            "List the traffic elements the driver must pay attention to, with their positions.",
        ))

    if ConversationType.COUNTERFACTUAL in enabled:
        for verdict in verdicts:
            q = _counterfactual_question(verdict.decision.decision_string())
            template_answer = _template_counterfactual(verdict)
            instruction = (
                "Reason about the consequences of the proposed maneuver using the "
                "simulated outcome given in the context."
            )
            item = make(ConversationType.COUNTERFACTUAL, q, template_answer, instruction,
                        trajectory_ids=(verdict.trajectory_id,))
            if not use_templates and item.provenance.fallback_reason is None:
                # Post-hoc keyword enforcement against the ground-truth verdict.
                wanted = verdict.categories()
                retries = max_retries
                while not wanted <= keyword_extractor(item.answer) and retries > 0:
                    retries -= 1
                    try:
                        answer = _backend_answer(backend, ctx, q, instruction)
                        item = replace(item, answer=answer)
                    except BackendError:
                        break
                if not wanted <= keyword_extractor(item.answer):
                    item = replace(
                        item,
                        answer=template_answer,
                        provenance=provenance((verdict.trajectory_id,),
                                              fallback="answer omitted ground-truth keywords"),
                    )
            items.append(item)

    if ConversationType.PLANNING in enabled:
        q, a = _template_planning(ctx)
        items.append(make(
            ConversationType.PLANNING, q, a,
            "Recommend the next trajectory and justify why it is safe.",
        ))

    if ConversationType.GENERAL in enabled:
        q, a = _template_general(ctx)
        items.append(make(
            ConversationType.GENERAL, q, a,
            "Answer the question about the scene contents concisely.",
        ))

    return items
