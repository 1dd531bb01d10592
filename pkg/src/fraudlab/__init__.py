"""Unsupervised card-fraud detection engine.

Ingestion, feature engineering, isolation forest, one-class SVM, autoencoder,
clustering, composite risk scoring and adaptive online risk weights, plus a
calibrated synthetic transaction generator for evaluation.
"""

__version__ = "0.1.0"
