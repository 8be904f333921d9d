"""Desk-scale simulator for teacher-student semi-supervised detection.

The package models the numeric core of a pseudo-label training loop on a
synthetic 2-D world: adaptive confidence thresholding, a decomposed
classification loss with analytic gradients, jitter-bagging box refinement,
and (double-)exponential moving-average teacher updates, plus the detection
metrics needed to compare configurations.
"""

__version__ = "0.1.0"
