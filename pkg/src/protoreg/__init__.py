"""Prototype-based interpretable video regression.

A video regressor whose prediction is a transparent weighted average of
prototype labels; prototypes live in a learned spatio-temporal feature space
and are projected onto real training clips, so every prediction comes with a
case-based explanation.
"""

__version__ = "0.1.0"
