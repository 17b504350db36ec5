"""Embedding extractor: runs pretrained (or reference) encoders over words,
images, and prompts, writing affect-toolkit embedding containers."""

from . import cli, encoders, jobs

__version__ = "0.1.0"
__all__ = ["cli", "encoders", "jobs", "__version__"]
