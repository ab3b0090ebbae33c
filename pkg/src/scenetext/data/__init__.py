"""Vocabulary, annotation ingestion, preprocessing, batch mixing and the synthetic corpus."""

from .mixing import Batch, MixSpec, apportion, make_batch
from .preprocess import preprocess
from .samples import (
    AnnotationError,
    AnnotationWarning,
    WordSample,
    load_annotations,
    read_image,
    save_corpus,
    write_image,
)
from .synth import synth_corpus
from .vocab import Vocabulary, encode_text

__all__ = [
    "AnnotationError",
    "AnnotationWarning",
    "Batch",
    "MixSpec",
    "Vocabulary",
    "WordSample",
    "apportion",
    "encode_text",
    "load_annotations",
    "make_batch",
    "preprocess",
    "read_image",
    "save_corpus",
    "synth_corpus",
    "write_image",
]
