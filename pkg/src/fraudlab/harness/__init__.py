"""Orchestration: configuration, metrics, model persistence, the end-to-end pipeline, reports and the CLI."""

from .config import PipelineConfig, load_config
from .metrics import EvalReport, EvalRow, auc_roc, metrics
from .persist import load_model, save_model
from .pipeline import StageError, run_pipeline

__all__ = [
    "PipelineConfig", "load_config", "EvalReport", "EvalRow", "auc_roc", "metrics",
    "load_model", "save_model", "StageError", "run_pipeline",
]
