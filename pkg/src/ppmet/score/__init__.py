"""Scoring: DER, character edit distance, cp-CER and ROVER."""
from .cpcer import CpCerReport, cp_cer, cp_cer_bruteforce, speaker_texts
from .der import DerReport, der
from .rover import rover, rover_text
from .text import TextNormPolicy, edit_distance, normalize_text

__all__ = [
    "CpCerReport",
    "DerReport",
    "TextNormPolicy",
    "cp_cer",
    "cp_cer_bruteforce",
    "der",
    "edit_distance",
    "normalize_text",
    "rover",
    "rover_text",
    "speaker_texts",
]
