"""Answerability gate: can the model answer this question unaided?

Renders the fixed gate prompt, sends it through the "know" role, and
normalizes the reply into a binary routing decision. The prompt wording
is a frozen artifact; tests pin it byte-for-byte.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

from .errors import AmbiguousGateOutput
from .modelgw import CompletionRequest, ModelGateway

GATE_TEMPLATE = (
    "Below is an instruction that describes a task. "
    "Write a response that appropriately completes the request.\n"
    "\n"
    "### Instruction:\n"
    "Based on your inner knowledge, determine whether you can answer this "
    'medical question. If you are sure you can answer it, please use "know" '
    "as your only answer. If you cannot answer it or are not confident about "
    'it, please use "unknow" as your only answer. If the actual situation is '
    "that you cannot answer it or the answer is incorrect, but you say "
    '"know", you will be severely punished.\n'
    "\n"
    "Medical question: {Query}\n"
    "\n"
    "### Response:\n"
)

_STRIP = string.punctuation + string.whitespace + "“”‘’"


@dataclass(frozen=True)
class GateDecision:
    decision: str  # "know" | "unknow"
    raw_output: str


def render_gate_prompt(question: str) -> str:
    """Substitute the question into the gate template, single pass.

    The replacement result is never rescanned, so a question containing
    the placeholder text is inserted literally.
    """
    if not question or not question.strip():
        raise ValueError("gate question must be non-empty")
    return GATE_TEMPLATE.replace("{Query}", question)


def normalize_gate_output(text: str) -> str | None:
    """Map raw model text to "know"/"unknow", or None when ambiguous.

    Lowercase, trim, strip surrounding punctuation, first whitespace
    token. Both negative spellings ("unknow", "unknown") are accepted.
    """
    s = text.strip().lower()
    if not s:
        return None
    first = s.split()[0].strip(_STRIP)
    if first == "know":
        return "know"
    if first in ("unknow", "unknown"):
        return "unknow"
    return None


class SelfKnowledgeGate:
    """Gate bound to a gateway; stateless across questions."""

    def __init__(self, gateway: ModelGateway, max_output_tokens: int = 8) -> None:
        self._gateway = gateway
        self._max_output_tokens = max_output_tokens

    def classify(self, question: str) -> GateDecision:
        """Route one question. Raises AmbiguousGateOutput when the reply
        is neither form; the raw text rides along in the error context so
        callers can apply their own fallback policy."""
        prompt = render_gate_prompt(question)
        result = self._gateway.complete(
            CompletionRequest(
                role="know", prompt=prompt, max_output_tokens=self._max_output_tokens
            )
        )
        decision = normalize_gate_output(result.text)
        if decision is None:
            raise AmbiguousGateOutput(
                "gate output is neither know nor unknow", raw_output=result.text
            )
        return GateDecision(decision=decision, raw_output=result.text)
