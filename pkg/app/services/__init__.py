"""
Сервисы Sensor Fusion Lab.

Модули импортируются напрямую (app.services.fusion и т.д.); здесь собраны
основные точки входа.
"""
from app.services.checkpoints import load_expert, load_fused, load_model, save_expert, save_fused
from app.services.detection import detect_frames, generate_proposals, nms, score_windows
from app.services.evaluation import average_precision, equal_error_rate, iou, match_detections, pr_curve
from app.services.experts import build_expert, expert_forward
from app.services.fusion import FusedModel, FusionScheme, fused_forward, mode_combine
from app.services.metrics_collector import RunMetrics, RunMetricsCollector
from app.services.pipeline import ExperimentPipeline
from app.services.synthdata import generate_sequence
from app.services.training import extract_crops, train_baseline, train_experts, train_gate

__all__ = [
    # Модели
    "build_expert",
    "expert_forward",
    "FusedModel",
    "FusionScheme",
    "fused_forward",
    "mode_combine",

    # Обучение и данные
    "generate_sequence",
    "extract_crops",
    "train_experts",
    "train_gate",
    "train_baseline",

    # Чекпоинты
    "save_expert",
    "save_fused",
    "load_expert",
    "load_fused",
    "load_model",

    # Детекция и оценка
    "generate_proposals",
    "score_windows",
    "nms",
    "detect_frames",
    "iou",
    "match_detections",
    "pr_curve",
    "average_precision",
    "equal_error_rate",

    # Запуски
    "ExperimentPipeline",
    "RunMetrics",
    "RunMetricsCollector",
]
