"""
Оценка детекций: IoU-сопоставление с политикой "без награды и без штрафа"
для перекрытых людей, кривая точность-полнота, AP и EER.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

from app.core.exceptions import InputError, ParameterError
from app.models.dataset import Annotation
from app.models.detection import (
    Detection,
    EqualErrorPoint,
    MatchLabel,
    MatchResult,
    MetricsReport,
    PRCurve,
    PRPoint,
)
from app.models.geometry import BoundingBox

logger = logging.getLogger(__name__)

EER_TOLERANCE = 1e-9

ScoredLabel = Tuple[float, MatchLabel]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Площадь пересечения / площадь объединения"""
    inter = a.intersection(b)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def _score_order(detections: Sequence[Detection]) -> List[int]:
    # устойчивая сортировка: при равных score сохраняется исходный порядок
    return sorted(range(len(detections)), key=lambda i: -detections[i].score)


def match_detections(
    detections: Sequence[Detection],
    annotations: Sequence[Annotation],
    iou_threshold: float,
) -> MatchResult:
    """
    Жадное сопоставление детекций одного кадра с разметкой.

    Детекции обрабатываются по убыванию score; каждая берет свободную
    аннотацию с наибольшим IoU >= порога. Совпадение с перекрытой аннотацией
    помечается ignored и занимает ее.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ParameterError(f"iou threshold must lie in (0, 1), got {iou_threshold}")

    labels: List[Optional[MatchLabel]] = [None] * len(detections)
    matched_annotation: List[Optional[int]] = [None] * len(detections)
    taken = [False] * len(annotations)

    for d in _score_order(detections):
        best, best_iou = None, iou_threshold
        for j, annotation in enumerate(annotations):
            if taken[j]:
                continue
            overlap = iou(detections[d].box, annotation.box)
            # при равенстве IoU выигрывает меньший индекс
            if overlap >= best_iou and (best is None or overlap > best_iou):
                best, best_iou = j, overlap
        if best is None:
            labels[d] = MatchLabel.FALSE_POSITIVE
            continue
        taken[best] = True
        matched_annotation[d] = best
        labels[d] = MatchLabel.IGNORED if annotations[best].occluded else MatchLabel.TRUE_POSITIVE

    false_negatives = sum(1 for j, a in enumerate(annotations) if not taken[j] and not a.occluded)
    return MatchResult(
        labels=labels,
        matched_annotation=matched_annotation,
        annotation_matched=taken,
        false_negatives=false_negatives,
    )


def pr_curve(scored: Sequence[ScoredLabel], total_positives: int) -> PRCurve:
    """
    Кривая по всем различным значениям score (по убыванию порога).

    Первая точка (inf, P=1, R=0) соответствует порогу выше любого score.
    Ignored-детекции не входят ни в числитель, ни в знаменатель.
    """
    if total_positives <= 0:
        raise InputError("precision-recall curve needs at least one positive annotation")

    counted = sorted(
        ((score, label) for score, label in scored if label != MatchLabel.IGNORED),
        key=lambda item: -item[0],
    )
    points = [PRPoint(threshold=float("inf"), precision=1.0, recall=0.0)]
    tp = fp = 0
    for i, (score, label) in enumerate(counted):
        if label == MatchLabel.TRUE_POSITIVE:
            tp += 1
        else:
            fp += 1
        if i + 1 < len(counted) and counted[i + 1][0] == score:
            continue
        points.append(PRPoint(
            threshold=score,
            precision=tp / (tp + fp) if tp + fp else 1.0,
            recall=tp / total_positives,
            true_positives=tp,
            false_positives=fp,
        ))
    return PRCurve(points=points, total_positives=total_positives)


def average_precision(curve: PRCurve) -> float:
    """AP по всем точкам: Σ (r_k − r_{k−1}) · max P при R >= r_k"""
    points = sorted(curve.points, key=lambda p: p.recall)
    envelope = [p.precision for p in points]
    for k in range(len(envelope) - 2, -1, -1):
        envelope[k] = max(envelope[k], envelope[k + 1])

    ap = 0.0
    previous = 0.0
    for point, precision in zip(points, envelope):
        if point.recall > previous:
            ap += (point.recall - previous) * precision
            previous = point.recall
    return min(max(ap, 0.0), 1.0)


def equal_error_rate(curve: PRCurve) -> EqualErrorPoint:
    """
    Первая по ходу кривой (по убыванию порога) точка P = R.

    Кривая просматривается один раз: точка k, в которой P и R совпадают,
    возвращается сразу; иначе при смене знака P − R между точками k и k+1
    значение интерполируется линейно. Без совпадения и смены знака
    возвращается конечная полнота с флагом endpoint.
    """
    points = curve.points
    for k, left in enumerate(points):
        d_left = left.precision - left.recall
        if abs(d_left) < EER_TOLERANCE and left.recall > 0:
            return EqualErrorPoint(value=left.recall, recall_at_threshold=left.recall,
                                   threshold=left.threshold)
        if k + 1 == len(points):
            break
        right = points[k + 1]
        d_right = right.precision - right.recall
        if d_left > 0 > d_right or d_left < 0 < d_right:
            t = d_left / (d_left - d_right)
            value = left.recall + t * (right.recall - left.recall)
            return EqualErrorPoint(
                value=min(max(value, 0.0), 1.0),
                recall_at_threshold=recall_at_eer(curve),
                threshold=right.threshold,
            )

    last = points[-1]
    return EqualErrorPoint(value=last.recall, recall_at_threshold=last.recall,
                           threshold=last.threshold, endpoint=True)


def recall_at_eer(curve: PRCurve) -> float:
    """Полнота последней точки с P >= R (рабочая точка EER)"""
    best = 0.0
    for point in curve.points:
        if point.precision >= point.recall:
            best = point.recall
    return best


def evaluate(
    detections_by_frame: Dict[int, List[Detection]],
    annotations_by_frame: Dict[int, List[Annotation]],
    iou_threshold: float,
) -> Tuple[MetricsReport, PRCurve]:
    """
    Оценка по набору кадров. Кадры берутся из annotations_by_frame;
    детекции кадров вне этого набора - ошибка.
    """
    unknown = sorted(set(detections_by_frame) - set(annotations_by_frame))
    if unknown:
        raise InputError(f"detections reference frames absent from the evaluated set: {unknown[:5]}")

    scored: List[ScoredLabel] = []
    total_positives = 0
    n_annotations = 0
    n_detections = 0
    for frame_index, annotations in annotations_by_frame.items():
        detections = detections_by_frame.get(frame_index, [])
        result = match_detections(detections, annotations, iou_threshold)
        scored += [(d.score, label) for d, label in zip(detections, result.labels)]
        total_positives += sum(1 for a in annotations if not a.occluded)
        n_annotations += len(annotations)
        n_detections += len(detections)

    curve = pr_curve(scored, total_positives)
    eer = equal_error_rate(curve)
    report = MetricsReport(
        ap=average_precision(curve),
        eer=eer.value,
        recall_at_eer=eer.recall_at_threshold,
        iou_threshold=iou_threshold,
        n_frames=len(annotations_by_frame),
        n_annotations=n_annotations,
        n_detections=n_detections,
        eer_endpoint=eer.endpoint,
    )
    if eer.endpoint:
        logger.warning("Кривая не пересекает P = R, EER взят на конце кривой")
    logger.info(f"IoU {iou_threshold}: AP {report.ap:.4f}, EER {report.eer:.4f}, кадров {report.n_frames}")
    return report, curve


def curve_to_tsv(curve: PRCurve) -> str:
    lines = ["threshold\tprecision\trecall"]
    lines += [f"{p.threshold!r}\t{p.precision!r}\t{p.recall!r}" for p in curve.points]
    return "\n".join(lines) + "\n"
