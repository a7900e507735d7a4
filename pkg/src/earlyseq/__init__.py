"""Early classification of multimodal sequences.

A spatial-temporal transformer with gated attention over temporal and
spatial caches, trained to stop reading a sequence as soon as it can
classify it, plus synthetic dataset generators and a Pareto-frontier
evaluation harness.
"""

__version__ = "0.1.0"
