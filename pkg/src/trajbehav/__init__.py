"""Trajectory-based driving behavior classification.

A desk-scale stack for classifying the behavior of traffic agents around an
ego-vehicle from short trajectory windows: a Bi-LSTM + multi-scale CNN fusion
classifier, three baselines (Gaussian-emission HMM, Conv1D, vanilla LSTM),
an imbalance-aware data pipeline, and a reproducible CLI.
"""

__version__ = "0.1.0"
