"""
Оркестрация команд: генерация данных, обучение по стадиям, детекция,
оценка и отчет. Каждая команда пишет результаты атомарно и сопровождает
их манифестом запуска.
"""
import logging
import shutil
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

from app import __version__
from app.core.config import RunConfig
from app.core.exceptions import ConfigurationError, DependencyError, InputError
from app.core.logging_config import get_run_id
from app.core.validators import DatasetValidator
from app.models.manifest import RunManifest
from app.models.training import CropDataset, Split, Stage, TrainConfig
from app.services import checkpoints
from app.services.dataset_io import (
    iter_dataset,
    read_annotations,
    read_dataset,
    read_regimes,
    split_frame_indices,
    write_dataset,
)
from app.services.detection import (
    DetectionRun,
    detect_frames,
    gates_path,
    read_detections,
    write_detections,
)
from app.services.evaluation import curve_to_tsv, evaluate
from app.services.experts import ExpertNet
from app.services.fusion import GATED_SCHEMES, FusedModel, FusionScheme
from app.services.metrics_collector import RunMetricsCollector
from app.services.reporting import GATES_NAME, METRICS_NAME, PR_CURVE_NAME, write_report
from app.services.storage import atomic_directory, atomic_file
from app.services.synthdata import generate_sequence
from app.services.training import extract_crops, train_baseline, train_experts, train_gate

logger = logging.getLogger(__name__)

RUN_MANIFEST_NAME = "run_manifest.json"
TRAIN_STAGES = ("experts", "gate", "late", "channel")
OVERRIDE_SCHEMES = (FusionScheme.MODE, FusionScheme.SWITCH, FusionScheme.AVERAGE)


def manifest_path_for(file: Union[str, Path]) -> Path:
    file = Path(file)
    return file.with_name(file.name + ".manifest.json")


class ExperimentPipeline:
    """Запуск команд эксперимента с общим конфигом и сбором метрик"""

    def __init__(
        self,
        config: RunConfig,
        threads: int = 1,
        enable_metrics: bool = True,
        progress: bool = False,
    ):
        self.config = config
        self.threads = max(1, threads)
        self.progress = progress
        self.metrics_collector = RunMetricsCollector(enabled=enable_metrics)

    # --------------------
    # Общие части
    # --------------------

    @property
    def depth_range(self):
        return (self.config.data.depth_min, self.config.data.depth_max)

    def _stage_config(self, stage: Stage) -> TrainConfig:
        train = self.config.train
        fusion = stage == Stage.FUSION
        return TrainConfig(
            learning_rate=train.gate_lr if fusion else train.lr,
            momentum=train.momentum,
            batch_size=train.batch_size,
            epochs=train.gate_epochs if fusion else train.epochs,
            dropout_rate=train.dropout,
            seed=train.seed,
            stage=stage,
        )

    @contextmanager
    def _run(self, command: str, inputs: Dict[str, str], outputs: Dict[str, str]) -> Iterator[RunManifest]:
        """Собирает метрики команды и заполняет манифест по завершении блока"""
        manifest = RunManifest(
            command=command,
            config=self.config.flat(),
            inputs=inputs,
            outputs=outputs,
            seed=self.config.train.seed,
            version=__version__,
            run_id=get_run_id(),
        )
        self.metrics_collector.start_run(command)
        try:
            yield manifest
        except Exception as e:
            self.metrics_collector.end_run(success=False, error_message=str(e))
            raise

    def _finish(self, manifest: RunManifest, path: Path) -> RunManifest:
        metrics = self.metrics_collector.end_run(success=True)
        manifest.duration_sec = metrics.duration_sec
        manifest.subtasks = metrics.subtasks
        manifest.memory_usage_mb = metrics.memory_usage_mb
        path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        return manifest

    def _crops(self, data_dir: Path, split: Split, modalities: Sequence[str]) -> CropDataset:
        data = self.config.data
        indices = split_frame_indices(data_dir, split)
        # подпоток генератора на каждое разбиение
        rng = np.random.default_rng([self.config.train.seed, 0, list(Split).index(split)])
        return extract_crops(
            iter_dataset(data_dir, indices),
            modalities,
            data.negatives_per_frame,
            rng,
            window=self.config.model.window,
            scales=self.config.detect.scales,
            aspect=self.config.detect.aspect,
            depth_range=self.depth_range,
            split=split,
        )

    def _load_experts(self, experts_dir: Optional[Path]) -> List[ExpertNet]:
        if experts_dir is None:
            raise DependencyError("this stage needs expert checkpoints (pass --experts)")
        experts_dir = Path(experts_dir)
        experts = []
        for modality in self.config.model.modalities:
            directory = experts_dir / modality
            if not (directory / checkpoints.MANIFEST_NAME).exists():
                raise DependencyError(f"expert checkpoint for '{modality}' not found in {experts_dir}")
            experts.append(checkpoints.load_expert(directory))
        return experts

    # --------------------
    # Команды
    # --------------------

    def generate_data(self, out_dir: Union[str, Path]) -> RunManifest:
        data = self.config.data
        out_dir = Path(out_dir)
        with self._run("gen-data", {}, {"dataset": str(out_dir)}) as manifest:
            with self.metrics_collector.subtask("generation"):
                frames = generate_sequence(
                    data.frames,
                    data.script,
                    (data.height, data.width),
                    data.actors,
                    data.seed,
                    script_cycle=data.script_cycle,
                    threads=self.threads,
                )
                DatasetValidator.validate_sequence(frames, (data.height, data.width))
            meta = {
                "seed": data.seed,
                "actors": data.actors,
                "script": ",".join(f"{start}:{name}" for start, name in data.script),
                "script_cycle": data.script_cycle,
            }
            with atomic_directory(out_dir) as staging:
                with self.metrics_collector.subtask("writing"):
                    write_dataset(frames, staging, meta)
                self._finish(manifest, staging / RUN_MANIFEST_NAME)
        return manifest

    def train(
        self,
        stage: str,
        data_dir: Union[str, Path],
        out_dir: Union[str, Path],
        experts_dir: Optional[Union[str, Path]] = None,
    ) -> RunManifest:
        """
        Стадии: experts (стадия 1), gate (mode/switch/average поверх экспертов),
        late и channel (базовые схемы).
        """
        if stage not in TRAIN_STAGES:
            raise ConfigurationError(f"unknown training stage '{stage}', expected one of {TRAIN_STAGES}")
        data_dir, out_dir = Path(data_dir), Path(out_dir)
        experts_dir = Path(experts_dir) if experts_dir is not None else None
        inputs = {"dataset": str(data_dir)}
        if experts_dir is not None:
            inputs["experts"] = str(experts_dir)

        with self._run(f"train-{stage}", inputs, {"checkpoints": str(out_dir)}) as manifest:
            # зависимости проверяются до чтения данных
            experts = self._load_experts(experts_dir) if stage in ("gate", "late") else []
            expert_dirs = [experts_dir / e.modality for e in experts] if experts else []
            hashes_before = [checkpoints.checkpoint_hash(d) for d in expert_dirs]

            with atomic_directory(out_dir) as staging:
                if stage == "experts":
                    self._train_experts(data_dir, staging)
                elif stage == "gate":
                    self._train_gate(data_dir, staging, out_dir, experts, expert_dirs)
                elif stage == "late":
                    self._train_late(data_dir, staging, out_dir, experts, expert_dirs)
                else:
                    self._train_channel(data_dir, staging)

                hashes_after = [checkpoints.checkpoint_hash(d) for d in expert_dirs]
                if hashes_before != hashes_after:
                    raise DependencyError("expert checkpoints changed during fusion training")
                self._finish(manifest, staging / RUN_MANIFEST_NAME)
        return manifest

    def _train_experts(self, data_dir: Path, staging: Path) -> None:
        modalities = self.config.model.modalities
        with self.metrics_collector.subtask("crops"):
            crops = self._crops(data_dir, Split.TRAIN, modalities)
        with self.metrics_collector.subtask("train_experts"):
            experts = train_experts(crops, modalities, self._stage_config(Stage.EXPERTS),
                                    threads=self.threads, progress=self.progress)
        for expert in experts:
            directory = staging / expert.modality
            checkpoints.save_expert(expert, directory)
            checkpoints.write_loss_log(directory / checkpoints.LOSS_LOG_NAME, expert.loss_history)

    def _train_gate(self, data_dir, staging, out_dir, experts, expert_dirs) -> None:
        with self.metrics_collector.subtask("crops"):
            crops = self._crops(data_dir, Split.GATE_VAL, self.config.model.modalities)
        with self.metrics_collector.subtask("train_gate"):
            gate = train_gate(experts, crops, self._stage_config(Stage.FUSION), progress=self.progress)
        checkpoints.write_loss_log(staging / checkpoints.LOSS_LOG_NAME, gate.loss_history)
        for scheme in OVERRIDE_SCHEMES:
            model = FusedModel(
                experts=experts,
                scheme=scheme,
                gate=gate if scheme in GATED_SCHEMES else None,
            )
            checkpoints.save_fused(model, staging / scheme.value, expert_dirs,
                                   final_directory=out_dir / scheme.value)

    def _train_late(self, data_dir, staging, out_dir, experts, expert_dirs) -> None:
        with self.metrics_collector.subtask("crops"):
            crops = self._crops(data_dir, Split.GATE_VAL, self.config.model.modalities)
        with self.metrics_collector.subtask("train_late"):
            model = train_baseline(FusionScheme.LATE, crops, self._stage_config(Stage.FUSION),
                                   experts=experts, progress=self.progress)
        checkpoints.save_fused(model, staging, expert_dirs, final_directory=out_dir)
        checkpoints.write_loss_log(staging / checkpoints.LOSS_LOG_NAME, model.head.loss_history)

    def _train_channel(self, data_dir: Path, staging: Path) -> None:
        order = self.config.model.channel_order
        with self.metrics_collector.subtask("crops"):
            crops = self._crops(data_dir, Split.TRAIN, order)
        with self.metrics_collector.subtask("train_channel"):
            model = train_baseline(FusionScheme.CHANNEL, crops, self._stage_config(Stage.EXPERTS),
                                   channel_order=order, progress=self.progress)
        checkpoints.save_fused(model, staging, [])
        checkpoints.write_loss_log(staging / checkpoints.LOSS_LOG_NAME, model.channel_net.loss_history)

    def detect(
        self,
        model_dir: Union[str, Path],
        data_dir: Union[str, Path],
        out_file: Union[str, Path],
        split: Union[Split, str] = Split.TEST,
        scheme: Optional[str] = None,
    ) -> RunManifest:
        model_dir, data_dir, out_file = Path(model_dir), Path(data_dir), Path(out_file)
        split = Split(split)
        inputs = {"model": str(model_dir), "dataset": str(data_dir), "split": split.value}
        with self._run("detect", inputs, {"detections": str(out_file)}) as manifest:
            model = checkpoints.load_model(model_dir)
            if scheme is not None:
                model = override_scheme(model, scheme)
            with self.metrics_collector.subtask("loading"):
                frames = read_dataset(data_dir, split_frame_indices(data_dir, split))
            detect = self.config.detect
            with self.metrics_collector.subtask("scoring"):
                run = detect_frames(
                    model,
                    frames,
                    detect.scales,
                    detect.aspect,
                    detect.stride_fraction,
                    detect.nms_iou,
                    window=self.config.model.window,
                    depth_range=self.depth_range,
                    threads=self.threads,
                )
            write_detections(out_file, run)
            with atomic_file(manifest_path_for(out_file)) as staging:
                self._finish(manifest, staging)
        return manifest

    def evaluate(
        self,
        detections_file: Union[str, Path],
        data_dir: Union[str, Path],
        out_dir: Union[str, Path],
        iou_threshold: Optional[float] = None,
        split: Union[Split, str] = Split.TEST,
        extra_iou: Optional[float] = None,
    ) -> RunManifest:
        detections_file, data_dir, out_dir = Path(detections_file), Path(data_dir), Path(out_dir)
        split = Split(split)
        iou_threshold = self.config.eval.iou if iou_threshold is None else iou_threshold
        inputs = {"detections": str(detections_file), "dataset": str(data_dir), "split": split.value}
        with self._run("evaluate", inputs, {"evaluation": str(out_dir)}) as manifest:
            run = read_detections(detections_file)
            annotations_by_frame = self._split_annotations(run, data_dir, split)

            with self.metrics_collector.subtask("evaluation"):
                report, curve = evaluate(run.detections, annotations_by_frame, iou_threshold)
                extra = None
                if extra_iou is not None:
                    extra, _ = evaluate(run.detections, annotations_by_frame, extra_iou)

            with atomic_directory(out_dir) as staging:
                for item in (report, extra):
                    if item is not None:
                        item.scheme, item.experts, item.split = run.scheme, ",".join(run.experts), split.value
                (staging / METRICS_NAME).write_text(report.to_text(), encoding="utf-8")
                (staging / PR_CURVE_NAME).write_text(curve_to_tsv(curve), encoding="utf-8")
                if extra is not None:
                    (staging / f"metrics_iou{extra_iou}.txt").write_text(extra.to_text(), encoding="utf-8")
                sidecar = gates_path(detections_file)
                if sidecar.exists():
                    shutil.copyfile(sidecar, staging / GATES_NAME)
                self._finish(manifest, staging / RUN_MANIFEST_NAME)
        return manifest

    @staticmethod
    def _split_annotations(run: DetectionRun, data_dir: Path, split: Split) -> Dict[int, list]:
        """
        Разметка кадров разбиения. Кадр детекций, отсутствующий в датасете, - ошибка;
        кадры других разбиений отбрасываются с предупреждением.
        """
        known = read_regimes(data_dir)
        absent = sorted(set(run.detections) - set(known))
        if absent:
            raise InputError(f"detections reference frames absent from dataset {data_dir}: {absent[:5]}")
        wanted = split_frame_indices(data_dir, split)
        outside = set(run.detections) - set(wanted)
        if outside:
            logger.warning(f"Отброшено детекций вне разбиения {split.value}: кадров {len(outside)}")
            for frame_index in outside:
                del run.detections[frame_index]
        annotations = read_annotations(data_dir)
        return {i: annotations.get(i, []) for i in wanted}

    def report(self, run_dirs: Sequence[Union[str, Path]], out_dir: Union[str, Path]) -> RunManifest:
        out_dir = Path(out_dir)
        inputs = {f"run{i}": str(d) for i, d in enumerate(run_dirs)}
        with self._run("report", inputs, {"report": str(out_dir)}) as manifest:
            write_report(run_dirs, out_dir)
            with atomic_file(out_dir / RUN_MANIFEST_NAME) as staging:
                self._finish(manifest, staging)
        return manifest


def override_scheme(model: FusedModel, scheme: str) -> FusedModel:
    """Пересобирает модель с той же гейтинговой сетью под другую схему"""
    try:
        target = FusionScheme(scheme)
    except ValueError:
        raise ConfigurationError(f"unknown fusion scheme '{scheme}'")
    if target not in OVERRIDE_SCHEMES or model.scheme not in OVERRIDE_SCHEMES:
        raise ConfigurationError(
            f"scheme override works among {[s.value for s in OVERRIDE_SCHEMES]}, "
            f"model is '{model.scheme.value}'"
        )
    if target in GATED_SCHEMES and model.gate is None:
        raise ConfigurationError(f"scheme '{target.value}' needs a trained gate")
    return FusedModel(
        experts=model.experts,
        scheme=target,
        gate=model.gate if target in GATED_SCHEMES else None,
    )

