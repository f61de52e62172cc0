"""Contextual token-embedding exporter for CoNLL slot-filling corpora.

Runs a pretrained transformer encoder over each utterance, pools subword
vectors back to whitespace tokens, and writes the NSDE binary container
consumed by the tagging toolkit."""

__version__ = "0.1.0"

from .export import ExportJob, export  # noqa: F401
from .errors import AlignmentError, EncoderLoadError  # noqa: F401
