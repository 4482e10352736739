"""Vocal error detection toolkit for microtonal monophonic singing.

Pipeline: audio ingestion -> log-mel features -> sliding-window dataset ->
two-head CNN-BiLSTM-attention model -> event-level evaluation, plus a
synthetic-corpus generator, a tonic detector, and an annotation HTTP service.
"""

__version__ = "0.1.0"
