"""Knowledge-base question answering with semantic graph encoders.

The pipeline: load a KB, build candidate semantic graphs for a question
from its linked entities, score each graph against the question with a
neural encoder, and return the answers of the best-scoring graph.
"""

from .kb import KnowledgeBase, load_kb
from .semgraph import LinkedQuestion, SemanticGraph, canonical_form
from .model import MODEL_KINDS, Scorer
from .inference import beam_search_parse
from .evaluation import evaluate

__version__ = "0.1.0"

__all__ = [
    "KnowledgeBase",
    "load_kb",
    "LinkedQuestion",
    "SemanticGraph",
    "canonical_form",
    "MODEL_KINDS",
    "Scorer",
    "beam_search_parse",
    "evaluate",
]
