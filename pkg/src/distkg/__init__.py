"""Knowledge-graph completion with message distillation and APIM scoring."""

__version__ = "0.1.0"
