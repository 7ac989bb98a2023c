"""medragkit: retrieval-augmented construction and evaluation of medical
image-text instruction data.

The toolkit covers the full desk-scale pipeline: corpus ingestion and
slice sampling, dual-corpus multimodal retrieval with score fusion,
LLM-driven augmentation into instruction samples, staged training
manifests, and a quantitative evaluation stack (closed-QA accuracy,
concept-overlap factuality, three-aspect judge scoring).
"""

__version__ = "0.1.0"

from . import analyze, augment, corpus, judge, llmclient, manifest, metrics, retrieval

__all__ = [
    "analyze",
    "augment",
    "corpus",
    "judge",
    "llmclient",
    "manifest",
    "metrics",
    "retrieval",
    "__version__",
]
