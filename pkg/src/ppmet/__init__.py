"""Algorithmic skeleton of a prompt-based meeting transcription pipeline.

Clustering of speaker-embedding windows, diarization fusion, TS-VAD output
post-processing with prompt refinement, and DER / cp-CER / ROVER scoring, plus
a synthetic-session generator for testing all of it without audio.
"""
from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
