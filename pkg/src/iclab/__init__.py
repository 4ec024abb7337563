"""Desk-scale lab for interactive visual in-context learning.

Images carry user guidance blended directly into their pixels; episodes of
(input, cue, target) triplets are tokenized with a patch k-means codebook and
modeled by a small decoder-only transformer trained with masked next-token
prediction, so unseen cue types can steer the model at test time.
"""

__version__ = "0.1.0"
