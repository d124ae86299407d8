"""Utterance normalization shared by mining and serving.

The online lookup key must match the mining-time key byte for byte, so every
component routes utterance text through this one function.
"""


def normalize_utterance(text: str) -> str:
    """Lowercase and collapse every whitespace run to a single space."""
    return " ".join(text.lower().split())
