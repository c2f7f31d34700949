"""Incremental text-to-speech with language-model pseudo lookahead.

Streaming synthesis that consumes a sentence a few words at a time: a
corpus-trained language model proposes a short continuation of the observed
text, a context-aware acoustic model conditions on it, and a deterministic
vocoder turns each segment's mel-spectrogram into audio that concatenates
exactly.
"""

__version__ = "0.1.0"
