"""slatewalk: turn curated item collections into synthetic multi-turn
item-set curation conversations, then train and evaluate a conversational
retriever on them.

The pipeline: a corpus of items and typed collections (corpus), a dual
encoder embedding both into one unit-vector space with an exact cosine
index (embedder), a biased random walk producing per-turn slates with
preference types (seqgen), utterance generation and filtering into full
conversations (uttgen), a retriever trained on those conversations (crs),
offline evaluation and experiments (evalharness), and a live pairwise
evaluation service with team-draft interleaving (interactive).
"""

from . import corpus, crs, embedder, evalharness, interactive, seqgen, uttgen

__all__ = [
    "corpus",
    "embedder",
    "seqgen",
    "uttgen",
    "crs",
    "evalharness",
    "interactive",
]

__version__ = "0.1.0"
