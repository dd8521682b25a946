# harness.py
"""
Toy semi-supervised segmentation loop

Teacher/student training on the shapes world:
- EMA teacher predicts on weak views of unlabeled (synthetic-domain) images
- Per mini-batch transport assignment turns teacher probabilities into
  pseudo-labels (or plain argmax when OT is disabled), gated by confidence
- Student learns from strong views (CutMix included) plus labeled images
- Plain gradient descent with poly learning-rate decay, EMA after every step
"""

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from ..ot_assign.errors import EvaluationError, ShapeError
from ..ot_assign.formats import read_label_png, write_label_png
from ..ot_assign.pixel_loss import (
    GateMask,
    LabelGrid,
    PseudoLabelGrid,
    argmax_pseudo_labels,
    confidence_gate,
    gate_fraction,
    real_pixel_loss,
    synthetic_pixel_loss,
    total_pixel_loss,
)
from ..ot_assign.transport import (
    LayoutDescriptor,
    MarginalPrior,
    SinkhornSettings,
    build_cost_matrix,
    class_potential,
    flatten_predictions,
    plan_row_normalize,
    sinkhorn_solve,
)
from .augment import apply_box, strong_augment, weak_augment
from .features import FEATURE_DIM, extract_features
from .metrics import ConfusionMatrix
from .model import LinearSoftmaxModel
from .settings import TrainConfig
from .shapes import ShapesConfig, ShapesSample, derive_seed, generate_dataset

logger = logging.getLogger(__name__)

# Dataset defaults (long-tail shapes world)
DEFAULT_NUM_CLASSES = 5
DEFAULT_NUM_LABELED = 200
DEFAULT_NUM_UNLABELED = 1000
DEFAULT_NUM_EVAL = 100
DEFAULT_IMBALANCE_RATIO = 20.0
ABLATION_SEEDS = 5
SCALING_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0)

# Transport runs on teacher probabilities average-pooled by this factor
OT_STRIDE = 4

# Seed-split stream ids
LABELED_STREAM = 1
UNLABELED_STREAM = 2
EVAL_STREAM = 3
LABELED_AUG_STREAM = 4
UNLABELED_AUG_STREAM = 5

STEP_LOG_FIELDS = ("step", "loss_real", "loss_syn", "lr", "gate_fraction")


@dataclass
class ToyData:
    labeled: List[ShapesSample]
    unlabeled: List[ShapesSample]
    evaluation: List[ShapesSample]
    num_classes: int


def build_data(
    seed: int,
    shapes: Optional[ShapesConfig] = None,
    num_labeled: int = DEFAULT_NUM_LABELED,
    num_unlabeled: int = DEFAULT_NUM_UNLABELED,
    num_eval: int = DEFAULT_NUM_EVAL,
) -> ToyData:
    """
    Labeled and evaluation samples come from the clean world; unlabeled
    samples from the corrupted (synthetic-domain) world.
    """
    clean = shapes or ShapesConfig(num_classes=DEFAULT_NUM_CLASSES, imbalance_ratio=DEFAULT_IMBALANCE_RATIO)
    synthetic = clean.model_copy(update={"corrupt": True})
    return ToyData(
        labeled=list(generate_dataset(clean, seed, LABELED_STREAM, num_labeled)),
        unlabeled=list(generate_dataset(synthetic, seed, UNLABELED_STREAM, num_unlabeled)),
        evaluation=list(generate_dataset(clean, seed, EVAL_STREAM, num_eval)),
        num_classes=clean.num_classes,
    )


def poly_lr(lr0: float, it: int, total: int, power: float = 0.9) -> float:
    """lr0 * (1 - it / total) ** power, with it clamped to [0, total]."""
    if total < 1:
        raise ValueError(f"total must be >= 1, got {total}")
    it = min(max(it, 0), total)
    return lr0 * (1.0 - it / total) ** power


class StepRecord(BaseModel):
    step: int
    loss_real: float
    loss_syn: float
    lr: float
    gate_fraction: float


@dataclass
class TrainState:
    config: TrainConfig
    model: LinearSoftmaxModel
    labeled_rng: np.random.Generator
    unlabeled_rng: np.random.Generator
    step: int = 0
    records: List[StepRecord] = field(default_factory=list)
    ot_seconds: float = 0.0
    ot_solves: int = 0
    ot_iterations: int = 0
    nonconverged_solves: int = 0
    step_seconds: float = 0.0
    class_potential: Optional[np.ndarray] = None


def init_state(config: TrainConfig, num_classes: int) -> TrainState:
    return TrainState(
        config=config,
        model=LinearSoftmaxModel(FEATURE_DIM, num_classes),
        labeled_rng=np.random.default_rng(derive_seed(config.seed, LABELED_AUG_STREAM)),
        unlabeled_rng=np.random.default_rng(derive_seed(config.seed, UNLABELED_AUG_STREAM)),
    )


def pool_probabilities(p: np.ndarray, stride: int, valid: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Average-pool (b, H, W, k) probabilities over stride x stride cells.

    With a (b, H, W) valid mask only valid pixels enter a cell's mean; cells
    without any valid pixel fall back to the plain mean.
    """
    b, h, w, k = p.shape
    if h % stride or w % stride:
        raise ShapeError(f"grid {h}x{w} is not divisible by stride {stride}")
    cells = (b, h // stride, stride, w // stride, stride)
    plain = p.reshape(*cells, k).mean(axis=(2, 4))
    if valid is None:
        return plain
    weights = np.asarray(valid, dtype=np.float64)[..., None]
    sums = (p * weights).reshape(*cells, k).sum(axis=(2, 4))
    counts = weights.reshape(*cells, 1).sum(axis=(2, 4))
    return np.where(counts > 0, sums / np.maximum(counts, 1.0), plain)


def pool_valid_counts(valid: np.ndarray, stride: int) -> np.ndarray:
    """Number of valid pixels in each stride x stride cell of a (b, H, W) mask."""
    b, h, w = valid.shape
    return np.asarray(valid, dtype=np.int64).reshape(b, h // stride, stride, w // stride, stride).sum(axis=(2, 4))


def transport_assign(
    state: TrainState,
    p_teacher: np.ndarray,
    valid: Optional[np.ndarray] = None,
    stride: int = OT_STRIDE,
) -> np.ndarray:
    """
    Per-pixel class distributions from one transport solve on the pooled batch.

    Cells without valid pixels stay out of the solve. The others carry pixel
    mass in proportion to their valid-pixel count, so padding takes no class
    mass. The class potential of each converged solve warm-starts the next.

    Args:
        state: Training state (holds beta, the warm start and OT statistics)
        p_teacher: (b, H, W, k) teacher probabilities
        valid: (b, H, W) mask of real (non-padding) pixels; all valid when omitted

    Returns:
        (b, H, W, k) row-normalized plan broadcast back to full resolution;
        cells left out keep their pooled teacher probabilities
    """
    b, h, w, k = p_teacher.shape
    valid = np.ones((b, h, w), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    pooled = pool_probabilities(p_teacher, stride, valid)
    matrix, layout = flatten_predictions(pooled.transpose(0, 3, 1, 2))
    weights = layout.flatten_map(pool_valid_counts(valid, stride)).astype(np.float64)
    keep = weights > 0
    q = matrix.copy()

    if keep.any():
        settings = SinkhornSettings(beta=state.config.beta)
        prior = MarginalPrior(row_mass=weights[keep] / weights[keep].sum(), col_mass=np.full(k, 1.0 / k))
        start = time.perf_counter()
        plan = sinkhorn_solve(
            build_cost_matrix(matrix[keep], settings), prior, settings, warm_start=state.class_potential
        )
        q[keep] = plan_row_normalize(plan)
        state.ot_seconds += time.perf_counter() - start
        state.ot_solves += 1
        state.ot_iterations += plan.iterations_used
        if plan.converged:
            state.class_potential = class_potential(plan, settings.beta)
        else:
            state.nonconverged_solves += 1
            state.class_potential = None
    else:
        logger.debug("No valid pixels in the batch, skipping transport")

    grid = layout.unflatten(q).transpose(0, 2, 3, 1)
    return np.repeat(np.repeat(grid, stride, axis=1), stride, axis=2)


def _real_branch(state: TrainState, batch: Sequence[ShapesSample]) -> Tuple[float, np.ndarray, np.ndarray]:
    views = [weak_augment(s.image, s.labels, state.labeled_rng) for s in batch]
    features = extract_features(np.stack([v.image for v in views]))
    b, h, w, d = features.shape
    x = features.reshape(-1, d)
    labels = LabelGrid(np.stack([v.labels for v in views]))
    loss, grad = real_pixel_loss(labels, state.model.predict_proba(x), LayoutDescriptor(b, h, w))
    grad_w, grad_b = state.model.parameter_gradients(x, grad)
    return loss, grad_w, grad_b


def _synthetic_branch(
    state: TrainState, batch: Sequence[ShapesSample]
) -> Tuple[float, np.ndarray, np.ndarray, float]:
    config = state.config
    model = state.model
    rng = state.unlabeled_rng

    weak = [weak_augment(s.image, s.labels, rng) for s in batch]
    features = extract_features(np.stack([v.image for v in weak]))
    b, h, w, d = features.shape
    k = model.num_classes
    layout = LayoutDescriptor(b, h, w)
    p_teacher = model.predict_proba(features, use_ema=True)
    p_flat = p_teacher.reshape(-1, k)

    valid = np.stack([v.valid for v in weak])
    gate = confidence_gate(p_flat, config.gamma)
    flags = (gate.flags & valid.reshape(-1)).reshape(b, h, w)

    if config.ot_enabled:
        q = transport_assign(state, p_teacher, valid)
    else:
        q = argmax_pseudo_labels(p_flat, gate, layout).q.reshape(b, h, w, k)

    strong_images, mixed_q, mixed_flags, mixed_valid = [], [], [], []
    for i, view in enumerate(weak):
        j = (i + 1) % b
        strong, box = strong_augment(view, rng, partner=weak[j] if b > 1 else None, cutmix_prob=config.cutmix_prob)
        strong_images.append(strong.image)
        mixed_valid.append(strong.valid)
        if box is None:
            mixed_q.append(q[i])
            mixed_flags.append(flags[i])
        else:
            mixed_q.append(apply_box(q[i], q[j], box))
            mixed_flags.append(apply_box(flags[i], flags[j], box))

    mixed_gate = GateMask(flags=np.stack(mixed_flags).reshape(-1), gamma=config.gamma)
    pl = PseudoLabelGrid(q=np.stack(mixed_q).reshape(-1, k), gate=mixed_gate, layout=layout)
    x_strong = extract_features(np.stack(strong_images)).reshape(-1, d)
    loss, grad = synthetic_pixel_loss(pl, model.predict_proba(x_strong))
    grad_w, grad_b = model.parameter_gradients(x_strong, grad)
    fraction = gate_fraction(mixed_gate, valid=np.stack(mixed_valid).reshape(-1))
    return loss, grad_w, grad_b, fraction


def train_step(
    state: TrainState,
    labeled_batch: Sequence[ShapesSample],
    unlabeled_batch: Sequence[ShapesSample],
) -> TrainState:
    """
    One optimization step on the averaged real and synthetic pixel losses.

    The state is updated in place (model, RNG streams, statistics) and returned.
    """
    start = time.perf_counter()
    config = state.config
    lr = poly_lr(config.lr0, state.step, config.total_iters, config.poly_power)

    loss_real, grad_w, grad_b = _real_branch(state, labeled_batch)
    loss_syn, fraction = 0.0, 0.0
    if unlabeled_batch:
        loss_syn, syn_w, syn_b, fraction = _synthetic_branch(state, unlabeled_batch)
        grad_w = grad_w + syn_w
        grad_b = grad_b + syn_b

    loss = total_pixel_loss(loss_syn, loss_real)
    state.model.apply_gradients(0.5 * grad_w, 0.5 * grad_b, lr)
    state.model.update_ema(config.ema_momentum)

    state.records.append(StepRecord(
        step=state.step, loss_real=loss_real, loss_syn=loss_syn, lr=lr, gate_fraction=fraction
    ))
    state.step += 1
    state.step_seconds += time.perf_counter() - start
    logger.debug(f"step {state.step}: loss={loss:.4f} real={loss_real:.4f} syn={loss_syn:.4f} lr={lr:.4f} gate={fraction:.3f}")
    return state


def evaluate_miou(
    model: LinearSoftmaxModel,
    eval_set: Sequence[ShapesSample],
    use_ema: bool = False,
) -> Tuple[np.ndarray, float]:
    """
    Per-class IoU over the whole set and its mean.

    Raises:
        EvaluationError: If the set is empty
    """
    if not eval_set:
        raise EvaluationError("evaluation set is empty")
    confusion = ConfusionMatrix(model.num_classes)
    for sample in eval_set:
        confusion.add(model.predict(extract_features(sample.image), use_ema), sample.labels)
    return confusion.iou()


@dataclass
class RunResult:
    """Outcome of one training run; timings are kept out of the metric CSVs."""

    config: TrainConfig
    records: List[StepRecord]
    per_class_iou: List[float]
    miou: float
    ot_seconds: float
    ot_solves: int
    ot_iterations: int
    nonconverged_solves: int
    step_seconds: float
    model: LinearSoftmaxModel

    @property
    def mean_ot_seconds(self) -> float:
        return self.ot_seconds / max(self.ot_solves, 1)

    @property
    def mean_step_seconds(self) -> float:
        return self.step_seconds / max(len(self.records), 1)


def run_training(config: TrainConfig, data: Optional[ToyData] = None) -> RunResult:
    """Train for config.total_iters steps and evaluate the student."""
    data = data or build_data(config.seed)
    state = init_state(config, data.num_classes)
    use_unlabeled = config.batch_unlabeled > 0 and len(data.unlabeled) > 0
    if config.batch_unlabeled > 0 and not data.unlabeled:
        logger.warning("⚠️ Unlabeled pool is empty, training on labeled data only")

    for _ in range(config.total_iters):
        labeled_idx = state.labeled_rng.integers(0, len(data.labeled), size=config.batch_labeled)
        unlabeled_batch: List[ShapesSample] = []
        if use_unlabeled:
            unlabeled_idx = state.unlabeled_rng.integers(0, len(data.unlabeled), size=config.batch_unlabeled)
            unlabeled_batch = [data.unlabeled[i] for i in unlabeled_idx]
        train_step(state, [data.labeled[i] for i in labeled_idx], unlabeled_batch)

    if state.nonconverged_solves:
        logger.warning(f"⚠️ {state.nonconverged_solves}/{state.ot_solves} transport solves did not converge")
    per_class, miou = evaluate_miou(state.model, data.evaluation)
    logger.info(f"✓ Trained {config.total_iters} steps (seed {config.seed}, OT {'on' if config.ot_enabled else 'off'}): mIoU {miou:.4f}")
    return RunResult(
        config=config,
        records=state.records,
        per_class_iou=[float(v) for v in per_class],
        miou=miou,
        ot_seconds=state.ot_seconds,
        ot_solves=state.ot_solves,
        ot_iterations=state.ot_iterations,
        nonconverged_solves=state.nonconverged_solves,
        step_seconds=state.step_seconds,
        model=state.model,
    )


class AblationRow(BaseModel):
    seed: int
    miou_ot: float
    miou_baseline: float
    rare_iou_ot: float
    rare_iou_baseline: float

    @property
    def delta(self) -> float:
        return self.miou_ot - self.miou_baseline

    @property
    def rare_delta(self) -> float:
        return self.rare_iou_ot - self.rare_iou_baseline


class AblationReport(BaseModel):
    rows: List[AblationRow]

    @property
    def mean_delta(self) -> float:
        return float(np.mean([row.delta for row in self.rows]))

    @property
    def rare_wins(self) -> int:
        return sum(row.rare_delta > 0 for row in self.rows)


def _rare_iou(per_class: Sequence[float]) -> float:
    # the last class is the rarest under the geometric long tail
    value = per_class[-1]
    return 0.0 if np.isnan(value) else float(value)


def run_ablation(
    config: TrainConfig,
    seeds: Optional[Sequence[int]] = None,
    data_factory: Callable[[int], ToyData] = build_data,
) -> AblationReport:
    """
    Paired runs per seed, identical data and augmentation streams:
    transport assignment on versus gated argmax pseudo-labels.
    """
    seeds = list(seeds) if seeds is not None else [config.seed + i for i in range(ABLATION_SEEDS)]
    rows = []
    for seed in seeds:
        data = data_factory(seed)
        on = run_training(config.model_copy(update={"seed": seed, "ot_enabled": True}), data)
        off = run_training(config.model_copy(update={"seed": seed, "ot_enabled": False}), data)
        rows.append(AblationRow(
            seed=seed,
            miou_ot=on.miou,
            miou_baseline=off.miou,
            rare_iou_ot=_rare_iou(on.per_class_iou),
            rare_iou_baseline=_rare_iou(off.per_class_iou),
        ))
        logger.info(f"✓ Seed {seed}: OT {on.miou:.4f} vs argmax {off.miou:.4f}")
    report = AblationReport(rows=rows)
    logger.info(f"✓ Mean paired mIoU delta {report.mean_delta:+.4f} over {len(rows)} seeds")
    return report


class ScalingRow(BaseModel):
    multiplier: float
    num_unlabeled: int
    miou: float


def run_scaling(
    config: TrainConfig,
    multipliers: Sequence[float] = SCALING_MULTIPLIERS,
    num_unlabeled: int = DEFAULT_NUM_UNLABELED,
) -> List[ScalingRow]:
    """Fixed labeled set, unlabeled synthetic pool scaled by each multiplier."""
    rows = []
    for multiplier in multipliers:
        count = int(round(num_unlabeled * multiplier))
        result = run_training(config, build_data(config.seed, num_unlabeled=count))
        rows.append(ScalingRow(multiplier=multiplier, num_unlabeled=count, miou=result.miou))
    return rows


# CSV outputs

PathLike = Union[str, Path]


def _write_rows(path: PathLike, header: Sequence[str], rows: Sequence[Sequence]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])


def write_step_log(records: Sequence[StepRecord], path: PathLike):
    _write_rows(path, STEP_LOG_FIELDS, [[getattr(r, f) for f in STEP_LOG_FIELDS] for r in records])


def write_iou_csv(per_class_iou: Sequence[float], path: PathLike):
    _write_rows(path, ("class", "iou"), [[c, float(v)] for c, v in enumerate(per_class_iou)])


def write_ablation_csv(report: AblationReport, path: PathLike):
    fields = list(AblationRow.model_fields)
    _write_rows(path, fields, [[getattr(row, f) for f in fields] for row in report.rows])


def read_ablation_csv(path: PathLike) -> AblationReport:
    with open(path, newline="") as f:
        return AblationReport(rows=[AblationRow(**row) for row in csv.DictReader(f)])


def write_scaling_csv(rows: Sequence[ScalingRow], path: PathLike):
    fields = list(ScalingRow.model_fields)
    _write_rows(path, fields, [[getattr(row, f) for f in fields] for row in rows])


# Prediction dumps

def dump_predictions(model: LinearSoftmaxModel, eval_set: Sequence[ShapesSample], out_dir: PathLike):
    """Write predictions/NNNN.png and labels/NNNN.png for every evaluation sample."""
    out_dir = Path(out_dir)
    (out_dir / "predictions").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    for index, sample in enumerate(eval_set):
        name = f"{index:04d}.png"
        write_label_png(out_dir / "predictions" / name, model.predict(extract_features(sample.image)))
        write_label_png(out_dir / "labels" / name, sample.labels)


def evaluate_dumps(pred_dir: PathLike, label_dir: PathLike, num_classes: int) -> Tuple[np.ndarray, float]:
    """
    mIoU of prediction PNGs against label PNGs paired by file name.

    Raises:
        EvaluationError: If no prediction has a matching label file
    """
    pred_dir, label_dir = Path(pred_dir), Path(label_dir)
    confusion = ConfusionMatrix(num_classes)
    paired = 0
    for pred_path in sorted(pred_dir.glob("*.png")):
        label_path = label_dir / pred_path.name
        if not label_path.is_file():
            logger.warning(f"⚠️ No label for {pred_path.name}")
            continue
        confusion.add(read_label_png(pred_path), read_label_png(label_path))
        paired += 1
    if paired == 0:
        raise EvaluationError(f"no prediction/label pairs in {pred_dir} and {label_dir}")
    return confusion.iou()
