"""Batch active learning where an LSTM sampling agent is trained by policy
gradient on estimated performance gains, plus baseline strategies, synthetic
oracles and an experiment harness."""

from .pool import ALCycleState, CurvePoint, SamplePool, SelectionBatch

__version__ = "0.1.0"

__all__ = ["ALCycleState", "CurvePoint", "SamplePool", "SelectionBatch", "__version__"]
