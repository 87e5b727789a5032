from .llm import EndpointConfig, FixtureRecorder, LLMDecomposer, extract_code_block, llm_propose
from .prompt import PromptBundle, build_prompt
from .scripted import ScriptedDecomposer, scripted_propose

__all__ = [
    "EndpointConfig",
    "FixtureRecorder",
    "LLMDecomposer",
    "PromptBundle",
    "ScriptedDecomposer",
    "build_prompt",
    "extract_code_block",
    "llm_propose",
    "scripted_propose",
]
