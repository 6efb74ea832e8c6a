"""mpcnn: two-party secure CNN inference over additive secret shares.

A data holder (P0) and a model holder (P1) evaluate fixed-point neural
networks over shares in Z_2^64, assisted by a trusted dealer that issues
Beaver triples, boolean triples and bit pairs. Every protocol run produces
an exact transcript of payload bytes and communication rounds.
"""

__version__ = "0.1.0"

from .ring import FixedPointConfig, RingTensor, encode, decode  # noqa: F401
