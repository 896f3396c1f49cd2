"""Learned sparse retrieval toolkit: distillation signal, toy encoder, index, evaluation."""

from .core import Qrels, Run, SparseVector, TeacherScoreTable, TrainingGroup

__version__ = "0.1.0"

__all__ = ["Qrels", "Run", "SparseVector", "TeacherScoreTable", "TrainingGroup"]
