from datetime import datetime
from typing import Dict

from pydantic import BaseModel, Field


class RunManifest(BaseModel):
    """Описание запуска команды: конфиг, пути, длительность"""

    command: str
    config: Dict[str, str] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    seed: int = 0
    version: str = ""
    run_id: str = ""
    started_at: datetime = Field(default_factory=datetime.now)
    duration_sec: float = 0.0
    subtasks: Dict[str, float] = Field(default_factory=dict)
    memory_usage_mb: float = 0.0
