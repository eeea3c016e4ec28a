"""Speaker-dependency experiments for visual speech unit maps.

The package covers the full loop: phoneme confusion collection, derivation of
phoneme-to-viseme maps from those confusions, HMM-GMM training over the mapped
units, word decoding against a bigram network, and the cross-speaker experiment
grid that scores how well one speaker's map transfers to another.
"""

__version__ = "0.1.0"
