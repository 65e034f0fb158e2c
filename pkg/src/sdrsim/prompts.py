"""Prompt templates.

Every template opens with a ``[TAG]`` line. Mock scripts key on these tags
and the call counter reports per tag, so keep them stable.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

ENDS_KEY = "The conversation ends with {speaker}'s utterance"


@dataclass(frozen=True)
class PromptInfo:
    """Generation context for one turn; ``None`` fields are left out entirely."""

    speaker: str
    listener: str
    dialogue: str
    background: str | None = None
    memories: tuple[str, ...] | None = None
    history: str | None = None
    time: str | None = None
    location: str | None = None
    statuses: tuple[tuple[str, str], ...] | None = None


@dataclass(frozen=True)
class Revision:
    candidate: str
    reasons: tuple[str, ...]
    suggestion: str


def _output_block(speaker: str) -> str:
    return (
        "**Output a JSON object:**\n"
        "{\n"
        f'    "Response": "<your reply as {speaker} (if any)>",\n'
        f'    "{ENDS_KEY.format(speaker=speaker)}": <true/false>\n'
        "}"
    )


def _setting(info: PromptInfo) -> list[str]:
    out = []
    if info.time or info.location:
        where = f" at {info.location}" if info.location else ""
        when = f"It is {info.time}" if info.time else "You are"
        out.append(f"{when}{where}.")
    if info.statuses:
        out.append("Current status:\n" + "\n".join(f"{n}: {s}" for n, s in info.statuses if s))
    return out


def _memories(info: PromptInfo) -> str | None:
    if not info.memories:
        return None
    return "\n".join(f"- {m}" for m in info.memories)


def _revision_lines(rev: Revision, persona: bool) -> list[str]:
    reasons = "\n".join(f"- {r}" for r in rev.reasons) or "- (none given)"
    head = (f'You might consider saying "{rev.candidate}", but it has some issues, for instance:'
            if persona else
            "You might be considering saying something that has some issues, such as:")
    return [
        head,
        reasons,
        "Here are some suggestions for your reference:",
        rev.suggestion,
        "If the response is redundant or repetitive, you can end the current dialogue.",
    ]


def persona_prompt(info: PromptInfo, revision: Revision | None = None) -> str:
    tag = "[REVISE-PERSONA]" if revision else "[GEN-PERSONA]"
    parts = [tag, f"Your name is {info.speaker}."]
    if info.background:
        parts.append(f"Your background is as follows:\n{info.background}")
    mem = _memories(info)
    if mem:
        parts.append(f"Here is what you remember:\n{mem}")
    parts.extend(_setting(info))
    if info.history:
        parts.append(f"Your earlier conversations with {info.listener}:\n{info.history}")
    if info.dialogue:
        parts.append(f"You are engaged in a conversation with {info.listener}, and here is "
                     f"the content of the dialogue so far:\n{info.dialogue}")
    else:
        parts.append(f"You are about to start a conversation with {info.listener}.")
    task = [
        "# Task:",
        (f"Consider whether you would respond to {info.listener}. If you choose to reply, what "
         "would you say? Would your response aim to conclude the conversation?"),
    ]
    if revision:
        task.extend(_revision_lines(revision, persona=True))
    parts.append("\n".join(task))
    parts.append(_output_block(info.speaker))
    return "\n\n".join(parts)


def task_prompt(info: PromptInfo, revision: Revision | None = None) -> str:
    tag = "[REVISE-TASK]" if revision else "[GEN-TASK]"
    ctx = ["# Contextual Information:"]
    if info.background:
        ctx.append(f"**Introduction:**\n{info.background}")
    mem = _memories(info)
    if mem:
        ctx.append(f"**Memories of {info.speaker}:**\n{mem}")
    setting = _setting(info)
    if setting:
        ctx.append("**Setting:**\n" + "\n".join(setting))
    if info.history:
        ctx.append(f"**Past Dialogues between {info.speaker} and {info.listener}:**\n{info.history}")
    ctx.append(f"**Current Dialogue between {info.speaker} and {info.listener}:**\n"
               + (info.dialogue or "(the conversation has not started yet)"))
    task = [
        "# Task:",
        (f"Assuming the role of {info.speaker}, consider whether you would respond to "
         f"{info.listener}. If you choose to reply, what would you say? Would your response "
         "aim to conclude the conversation?"),
    ]
    if revision:
        task.extend(_revision_lines(revision, persona=False))
    return "\n\n".join([tag, "\n\n".join(ctx), "\n".join(task), _output_block(info.speaker)])


def origin_prompt(info: PromptInfo) -> str:
    parts = ["[GEN]"]
    if info.background:
        parts.append(f"Here is a brief description of {info.speaker}:\n{info.background}")
    mem = _memories(info)
    if mem:
        parts.append(f"Here are {info.speaker}'s relevant memories:\n{mem}")
    parts.extend(_setting(info))
    if info.history:
        parts.append(f"Previous conversations between {info.speaker} and {info.listener}:\n"
                     f"{info.history}")
    if info.dialogue:
        parts.append(f"Here is the conversation so far:\n{info.dialogue}")
    else:
        parts.append(f"{info.speaker} is starting a conversation with {info.listener}.")
    parts.append(f"Based on the information above, what will {info.speaker} say next to "
                 f"{info.listener}? If {info.speaker} has nothing more to say, the "
                 "conversation may end.")
    parts.append(_output_block(info.speaker))
    return "\n\n".join(parts)


def render_evidence(dialogues: Sequence) -> str:
    blocks = []
    for d in dialogues:
        blocks.append(f"Time: {d.time.isoformat(sep=' ')}\n{d.render()}")
    return "\n\n".join(blocks)


def repetition_prompt(speaker: str, background: str, evidence: str, candidate: str) -> str:
    return f"""[REP-DIAG]
Context for the task:
{background}

Here are some conversation histories between various people:
{evidence}

{speaker} is about to say the following sentence ('the response') next in the latest session:
{candidate}

---
# Task: Please identify any "unnatural points" in 'the response'.
An "unnatural point" means a redundant statement, or one repeating what was already said, given the previous conversations.
Rate 'the response' from 1 (no unnatural point) to 10 (the most significant unnatural point) and explain the reason for the score.

Output format: Output a json of the following format:
{{
    "reason": "point out the unnatural point and your reason for the score",
    "score": <json integer>
}}"""


def consistency_prompt(speaker: str, listener: str, background: str, evidence: str,
                       time: str, current: str, candidate: str) -> str:
    return f"""[CON-DIAG]
# Context
**Background:**
{background}

**Past Dialogues involving {speaker}:**
{evidence}

**Current Dialogue between {speaker} and {listener}:**
Time: {time}
{current}

**Candidate Response:**
{speaker} is planning to say: {candidate}

---
# Task
Determine if there is any contradiction between the candidate response and the past dialogues or the character background. Do not count the absence of a repeated mention as an inconsistency. Ignore statements that are situational or not meant literally. Think step by step, then rate the severity from 1 (fully consistent) to 10 (clear contradiction).

**Output a JSON object:**
{{
    "reason": "<specify any contradictions, if any>",
    "score": <json integer>
}}"""


def agreement_prompt(mentioned: str, speaker: str, background: str, memories: str,
                     last_dialogue: str, candidate: str) -> str:
    return f"""[AGREE-DIAG]
Context for the task:

Here is a brief description of {mentioned}.
{background}

Here is the memory that is in {mentioned}'s head:
{memories or '(no memories)'}

Here is the previous conversation between {mentioned} and {speaker}:
{last_dialogue or '(they have not talked before)'}

{speaker} just mentioned the following statement about {mentioned}:
{candidate}

---
# Task: Based on the information provided above, would {mentioned} agree with the statement?

Output format: Output a json of the following format:
{{
    "agreed": <json boolean>,
    "reason": "the reason that led {mentioned} to make the judgment"
}}"""


def hallucination_prompt(speaker: str, listener: str, mentioned: str, dialogue: str,
                         candidate: str) -> str:
    return f"""[HALLU-SCORE]
{speaker} is talking with {listener}. The conversation so far:
{dialogue or '(no earlier turns)'}

{speaker} is about to say:
{candidate}

The utterance mentions {mentioned}, who is not part of this conversation.

# Task: Rate from 1 to 10 how likely this utterance spreads a harmful fabrication about {mentioned}. Give a higher score when:
(a) {speaker} states something about {mentioned} as an objective fact, rather than a personal plan, wish or opinion;
(b) {mentioned} would be able to confirm or deny the statement right now;
(c) the statement, if untrue but later believed, would significantly affect {mentioned}.

Output format: Output a json of the following format:
{{
    "reason": "your reasoning",
    "score": <json integer>
}}"""


def triplet_prompt(text: str, is_dialogue: bool) -> str:
    tag = "[TRIPLETS-DIALOGUE]" if is_dialogue else "[TRIPLETS-UTTERANCE]"
    what = "dialogue" if is_dialogue else "utterance"
    return f"""{tag}
Extract the personal information about people stated in the following {what} as a list of (Subject, Relation, Object) triplets. Use full names for people where known.

{text}

Output a JSON list of triplets, each a list of three strings, for example:
[["Giorgio Rossi", "working on", "mathematical patterns in nature"]]
Output [] if there is no personal information."""


def selection_prompt(suspicious: str, dialogues: str, k: int) -> str:
    return f"""[NLIG-SELECT]
A new utterance may contradict earlier conversations. These pairs of facts were flagged as possibly contradictory (earlier fact => new fact, with the id of the earlier dialogue):
{suspicious}

The earlier dialogues:
{dialogues}

# Task: Select at most {k} dialogue ids that are most likely contradicted by the new utterance, most relevant first.

Output format: Output a json of the following format:
{{
    "dialogue_ids": ["<id>", ...]
}}"""


def integration_prompt(speaker: str, candidate: str, dialogue: str, comments: str) -> str:
    return f"""[INTEGRATE]
{speaker} was about to say the following in this conversation:
{dialogue or '(no earlier turns)'}

Candidate: {candidate}

Reviewers raised these issues with the candidate:
{comments}

# Task: Combine the issues into a short list of concrete suggestions for how {speaker} should revise the utterance. Output only the suggestions."""


def best_of_prompt(speaker: str, dialogue: str, candidates: Sequence[str]) -> str:
    listing = "\n".join(f"{i}. {c}" for i, c in enumerate(candidates, 1))
    return f"""[JUDGE-BEST]
Conversation so far:
{dialogue or '(no earlier turns)'}

Candidate next utterances by {speaker}:
{listing}

# Task: Pick the candidate that is the most natural, consistent and informative continuation. Answer with the number only."""


def judge_prompt(evidence: str, dialogue: str, time: str, names: Sequence[str]) -> str:
    return f"""[JUDGE-EVAL]
Here are earlier dialogues involving {' and '.join(names)}:
{evidence or '(none)'}

Here is the dialogue to evaluate:
Time: {time}
{dialogue}

# Task: Score the dialogue to evaluate on a scale from 1 to 10 for
- consistency: agreement with the earlier dialogues and with itself;
- factualness: freedom from fabricated statements about people.

Output format: Output a json of the following format:
{{
    "consistency": {{"score": <json integer>, "reason": "..."}},
    "factualness": {{"score": <json integer>, "reason": "..."}}
}}"""
