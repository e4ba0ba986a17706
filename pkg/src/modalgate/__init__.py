"""modalgate: turn a text-only chat LLM into a multi-modal assistant.

The LLM is tuned (or few-shot prompted) to answer every instruction with a
flat ``{"type", "response"}`` object; the router parses that structured
response, repairs light damage, and dispatches the response field to a
text-to-image or text-to-speech backend when the type asks for one.
"""

from .backends import (
    BackendConfig,
    BackendError,
    BackendKind,
    ChatReply,
    ChatRequest,
    MediaArtifact,
    ReferenceImageStore,
)
from .metrics import EvalReport, QAItem, bleu, eligibility_gate, modality_accuracy, qa_score
from .parsing import extract_structured_block, parse_structured_response, repair_structured_text
from .prompting import (
    ConversationHistory,
    render_fewshot_prompt,
    render_teacher_prompt,
    render_tuned_prompt,
)
from .router import RoutedResult, RouteTrace, route, route_with_retry
from .schema import (
    InstructionRecord,
    Modality,
    ParseOutcome,
    Source,
    StructuredResponse,
    canonicalize_modality,
    read_records,
    write_records,
)

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "BackendError",
    "BackendKind",
    "ChatReply",
    "ChatRequest",
    "ConversationHistory",
    "EvalReport",
    "InstructionRecord",
    "MediaArtifact",
    "Modality",
    "ParseOutcome",
    "QAItem",
    "ReferenceImageStore",
    "RoutedResult",
    "RouteTrace",
    "Source",
    "StructuredResponse",
    "bleu",
    "canonicalize_modality",
    "eligibility_gate",
    "extract_structured_block",
    "modality_accuracy",
    "parse_structured_response",
    "qa_score",
    "read_records",
    "render_fewshot_prompt",
    "render_teacher_prompt",
    "render_tuned_prompt",
    "repair_structured_text",
    "route",
    "route_with_retry",
    "write_records",
]
