"""Parametric vs. retrieval-augmented LLM conflict forecasting harness."""

__version__ = "0.1.0"
