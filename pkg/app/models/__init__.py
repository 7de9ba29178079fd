# Экспортируем все модели для удобного импорта
from .geometry import BoundingBox
from .dataset import (
    Annotation,
    CANONICAL_REGIMES,
    DepthNoise,
    EnvironmentRegime,
    MODALITIES,
    Modality,
    ModalityId,
    MultimodalFrame,
    RgbNoise,
    get_modality,
    get_regime,
    identity_regime,
)
from .detection import (
    Detection,
    EqualErrorPoint,
    MatchLabel,
    MatchResult,
    MetricsReport,
    PRCurve,
    PRPoint,
)
from .training import CLASS_NAMES, HUMAN, BACKGROUND, CropDataset, Split, Stage, TrainConfig
from .manifest import RunManifest

__all__ = [
    "BoundingBox",
    "Annotation",
    "CANONICAL_REGIMES",
    "DepthNoise",
    "EnvironmentRegime",
    "MODALITIES",
    "Modality",
    "ModalityId",
    "MultimodalFrame",
    "RgbNoise",
    "get_modality",
    "get_regime",
    "identity_regime",
    "Detection",
    "EqualErrorPoint",
    "MatchLabel",
    "MatchResult",
    "MetricsReport",
    "PRCurve",
    "PRPoint",
    "CLASS_NAMES",
    "HUMAN",
    "BACKGROUND",
    "CropDataset",
    "Split",
    "Stage",
    "TrainConfig",
    "RunManifest",
]
