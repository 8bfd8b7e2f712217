"""Dual recurrent encoders for speech emotion recognition.

Audio (MFCC + prosody) and text (token) encoders built on a small numpy
GRU kernel, combined into four classifiers: ARE, TRE, MDRE and MDREA.
"""

__version__ = "0.1.0"

CLASSES = ("angry", "happy", "sad", "neutral")
