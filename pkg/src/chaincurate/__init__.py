"""Curation and evaluation pipeline for math reasoning training data.

Filters a problem corpus by model pass rate, decontaminates it against
evaluation benchmarks, scores candidate reasoning chains with a weighted
rule-based metric, assembles small ranked fine-tuning datasets, and grades
model outputs with an unbiased pass@k estimator.
"""

__version__ = "0.1.0"
