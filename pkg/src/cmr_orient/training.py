"""Dataset assembly, the training loop and two-stage fine-tuning.

Batch order and augmentation are pure functions of ``(seed, stage, epoch,
sample)``, so results do not depend on how many preprocessing workers run.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import orientation
from .errors import DataError, DivergenceError, ManifestError, TooFewPatientsError
from .inference import score
from .manifest import DatasetManifest
from .model import ModelParams, OrientNetConfig, init_params, loss_and_grad, predict_proba, refresh_bn_stats
from .nifti import read_nifti
from .nn.optim import Adam
from .preprocess import AugmentConfig, augment, input_channels, slice_volume

logger = logging.getLogger(__name__)

STAGE_TAGS = {"train": 0, "frozen": 1, "unfrozen": 2}

FINETUNE_EPOCHS = 15
FINETUNE_LR = 1e-4


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 42
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    val_ratio: float = 0.2
    workers: int = 1
    # re-estimate BN running stats on clean training inputs after each epoch
    bn_refresh: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 < self.val_ratio < 1:
            raise ValueError(f"val_ratio must be in (0, 1), got {self.val_ratio}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for batch norm")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def for_finetune(cls, **overrides) -> "TrainConfig":
        """Transfer defaults: 15 epochs at a tenth of the initial rate."""
        return cls(**{"epochs": FINETUNE_EPOCHS, "lr": FINETUNE_LR, **overrides})


@dataclass
class EpochStats:
    epoch: int
    stage: str
    train_loss: float
    train_accuracy: float
    val_accuracy: float
    val_volume_accuracy: float


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def __getitem__(self, i):
        return self.epochs[i]

    def extend(self, other: "TrainHistory"):
        self.epochs.extend(other.epochs)

    def to_list(self) -> list:
        return [asdict(e) for e in self.epochs]

    def to_json(self) -> str:
        return json.dumps(self.to_list(), indent=2)


# -- dataset assembly ----------------------------------------------------------


def split_patients(manifest: DatasetManifest, val_ratio: float = 0.2, seed: int = 42):
    """Shuffle patients with ``seed`` and hold out ``round(val_ratio * n)`` (at least 1) of them."""
    patients = manifest.patients
    if len(patients) < 2:
        raise TooFewPatientsError(f"need at least 2 patients to split, got {len(patients)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = [patients[i] for i in rng.permutation(len(patients))]
    n_val = min(max(1, round(val_ratio * len(patients))), len(patients) - 1)
    val_ids = set(order[:n_val])
    train = DatasetManifest([r for r in manifest.records if r.patient_id not in val_ids])
    val = DatasetManifest([r for r in manifest.records if r.patient_id in val_ids])
    return train, val


def expand_orientations(manifest: DatasetManifest) -> DatasetManifest:
    """Eight records per canonical record, one per orientation label (record-major order)."""
    out = []
    for rec in manifest.records:
        if rec.orientation_label != 0 or rec.transform != 0:
            raise ManifestError(f"{rec.path}: orientation expansion needs canonical (label 0) records")
        for k in range(orientation.NUM_ORIENTATIONS):
            out.append(type(rec)(rec.path, rec.patient_id, rec.modality, k, transform=k))
    return DatasetManifest(out)


def load_record_volume(rec):
    """Voxels of a manifest record after its on-load transform."""
    data = read_nifti(rec.path).data
    return orientation.apply_orientation(data, rec.transform) if rec.transform else data


@dataclass
class SliceSet:
    images: list  # raw 2D float32 slices
    labels: np.ndarray
    volume_ids: np.ndarray

    def __len__(self):
        return len(self.images)


def load_slices(manifest: DatasetManifest) -> SliceSet:
    images, labels, volume_ids = [], [], []
    cache = {}
    for vid, rec in enumerate(manifest.records):
        if rec.path not in cache:
            cache[rec.path] = read_nifti(rec.path).data
        data = cache[rec.path]
        if rec.transform:
            data = orientation.apply_orientation(data, rec.transform)
        for img in slice_volume(data):
            images.append(img)
            labels.append(rec.orientation_label)
            volume_ids.append(vid)
    return SliceSet(images, np.asarray(labels, dtype=np.int64), np.asarray(volume_ids, dtype=np.int64))


# -- training ------------------------------------------------------------------


def _sample_rng(seed: int, stage: str, epoch: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, STAGE_TAGS[stage], epoch, index])))


def _prepare(args):
    image, aug, size, rng = args
    return input_channels(augment(image, aug, rng), size)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    # a lone trailing sample cannot be batch-normalised
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches.pop()
    return batches


def _run_epochs(params, train_slices, val_inputs, val_slices, config, stage, n_epochs, epoch_offset, log):
    history = TrainHistory()
    opt = Adam(params.parameters(), lr=config.lr)
    size = params.config.input_size
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    clean_inputs = None
    try:
        for e in range(n_epochs):
            epoch = epoch_offset + e + 1
            order_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, STAGE_TAGS[stage], epoch])))
            losses, correct, seen = [], 0, 0
            for idx in _batches(len(train_slices), config.batch_size, order_rng):
                jobs = [
                    (train_slices.images[i], config.augment, size, _sample_rng(config.seed, stage, epoch, int(i)))
                    for i in idx
                ]
                xs = list(pool.map(_prepare, jobs)) if pool else [_prepare(j) for j in jobs]
                x = np.stack(xs)
                y = train_slices.labels[idx]
                loss, logits = loss_and_grad(params, x, y, training=True)
                if not math.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at epoch {epoch} ({stage})")
                opt.step()
                losses.append(loss * len(idx))
                correct += int((logits.argmax(axis=1) == y).sum())
                seen += len(idx)
            if config.bn_refresh and not params.features_frozen:
                if clean_inputs is None:
                    clean_inputs = stack_inputs(train_slices, size)
                refresh_bn_stats(params, clean_inputs, order_rng.permutation(len(train_slices)), config.batch_size)
            report = score(predict_proba(params, val_inputs), val_slices.labels, val_slices.volume_ids)
            stats = EpochStats(
                epoch=epoch,
                stage=stage,
                train_loss=float(sum(losses) / seen),
                train_accuracy=correct / seen,
                val_accuracy=report.slice_acc,
                val_volume_accuracy=report.volume_acc,
            )
            history.epochs.append(stats)
            log(stats)
    finally:
        if pool:
            pool.shutdown()
    return history


def _default_log(stats: EpochStats):
    logger.info(
        "epoch %d [%s] loss %.4f train_acc %.4f val_acc %.4f val_vol_acc %.4f",
        stats.epoch, stats.stage, stats.train_loss, stats.train_accuracy, stats.val_accuracy, stats.val_volume_accuracy,
    )


def _check_sets(train_set, val_set):
    if not len(train_set) or not len(val_set):
        raise DataError("training and validation sets must be non-empty")


def stack_inputs(slices: SliceSet, size: int) -> np.ndarray:
    return np.stack([input_channels(img, size) for img in slices.images])


def train(
    train_set: DatasetManifest,
    val_set: DatasetManifest,
    config: TrainConfig,
    model_config: OrientNetConfig | None = None,
    log=_default_log,
):
    """Train a fresh classifier on orientation-expanded manifests.

    Returns ``(params, history)``; the final parameters are returned, there is
    no early stopping.
    """
    _check_sets(train_set, val_set)
    model_config = model_config or OrientNetConfig()
    params = init_params(model_config, np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 99]))))
    train_slices = load_slices(train_set)
    val_slices = load_slices(val_set)
    val_inputs = stack_inputs(val_slices, model_config.input_size)
    history = _run_epochs(params, train_slices, val_inputs, val_slices, config, "train", config.epochs, 0, log)
    return params, history


def finetune(
    params: ModelParams,
    train_set: DatasetManifest,
    val_set: DatasetManifest,
    config: TrainConfig,
    freeze_epochs: int = 5,
    log=_default_log,
    on_stage_end=None,
):
    """Two-stage transfer: head only for ``freeze_epochs``, then everything.

    During the frozen stage the conv weights, biases and batch-norm affine
    terms are not updated and the batch-norm running statistics stay fixed.
    The optimizer starts fresh at each stage. ``params`` is not modified;
    ``on_stage_end(stage, params)`` is called after each stage that ran.
    """
    if not 0 <= freeze_epochs <= config.epochs:
        raise ValueError(f"freeze_epochs must be in [0, {config.epochs}], got {freeze_epochs}")
    _check_sets(train_set, val_set)
    params = params.copy()
    train_slices = load_slices(train_set)
    val_slices = load_slices(val_set)
    val_inputs = stack_inputs(val_slices, params.config.input_size)
    history = TrainHistory()

    if freeze_epochs:
        params.set_features_frozen(True)
        history.extend(_run_epochs(params, train_slices, val_inputs, val_slices, config, "frozen", freeze_epochs, 0, log))
        params.set_features_frozen(False)
        if on_stage_end:
            on_stage_end("frozen", params)
    remaining = config.epochs - freeze_epochs
    if remaining:
        history.extend(
            _run_epochs(params, train_slices, val_inputs, val_slices, config, "unfrozen", remaining, freeze_epochs, log)
        )
        if on_stage_end:
            on_stage_end("unfrozen", params)
    return params, history
