"""LLM backends, prompt assembly and the generative operators."""

from .backend import CallLog, CallRecord, Completion, HttpBackend, LlmBackend, MockBackend, StageSettings
from .operators import (
    CritiqueResult,
    ExpertSummary,
    AgentContext,
    GenerateResult,
    PromptSet,
    Proposal,
    Removal,
    critique,
    direct_predict,
    generate,
    summarize,
)

__all__ = [
    "AgentContext",
    "CallLog",
    "CallRecord",
    "Completion",
    "CritiqueResult",
    "ExpertSummary",
    "GenerateResult",
    "HttpBackend",
    "LlmBackend",
    "MockBackend",
    "PromptSet",
    "Proposal",
    "Removal",
    "StageSettings",
    "critique",
    "direct_predict",
    "generate",
    "summarize",
]
