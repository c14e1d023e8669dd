"""Slice predictions, volume-level voting, and orientation standardisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import orientation
from .model import ModelParams, predict_proba
from .nifti import Volume
from .preprocess import input_channels, slice_volume


@dataclass
class VolumePrediction:
    per_slice_probs: np.ndarray  # (sz, 8)
    per_slice_labels: np.ndarray  # (sz,)
    voted_label: int
    vote_margin: float

    def to_dict(self) -> dict:
        return {
            "voted_label": int(self.voted_label),
            "vote_margin": float(self.vote_margin),
            "per_slice": [
                {"index": i, "label": int(lab), "probs": [float(p) for p in probs]}
                for i, (lab, probs) in enumerate(zip(self.per_slice_labels, self.per_slice_probs))
            ],
        }


def vote(probs: np.ndarray) -> tuple:
    """Majority vote over slice argmaxes.

    Ties go to the label with more summed probability, then to the lower
    label. Returns ``(voted_label, per_slice_labels, margin)`` where the
    margin is the gap between the two largest summed probabilities.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = probs.argmax(axis=1)
    counts = np.bincount(labels, minlength=probs.shape[1])
    mass = probs.sum(axis=0)
    tied = np.flatnonzero(counts == counts.max())
    best = tied[mass[tied] == mass[tied].max()]
    voted = int(best.min())
    top = np.sort(mass)[::-1]
    margin = float(top[0] - top[1]) if len(top) > 1 else float(top[0])
    return voted, labels, margin


def predict_slice(params: ModelParams, image: np.ndarray) -> np.ndarray:
    x = input_channels(image, params.config.input_size)[None]
    return predict_proba(params, x)[0]


def slice_inputs(params: ModelParams, volume: Volume) -> np.ndarray:
    return np.stack([input_channels(s, params.config.input_size) for s in slice_volume(volume)])


def predict_volume(params: ModelParams, volume: Volume) -> VolumePrediction:
    probs = predict_proba(params, slice_inputs(params, volume))
    voted, labels, margin = vote(probs)
    return VolumePrediction(probs, labels, voted, margin)


def _transform_volume(volume: Volume, label: int) -> Volume:
    dx, dy, dz = volume.spacing
    spacing = (dy, dx, dz) if orientation.swaps_axes(label) else (dx, dy, dz)
    return Volume(orientation.apply_orientation(volume.data, label), spacing, volume.source_header)


def standardize(volume: Volume, predicted: int) -> Volume:
    """Undo orientation ``predicted``: the voxel grid comes back in label-0 order."""
    return _transform_volume(volume, orientation.inverse(predicted))


def transform(volume: Volume, label: int) -> Volume:
    return _transform_volume(volume, label)


def recognize_and_standardize(params: ModelParams, volume: Volume) -> tuple:
    pred = predict_volume(params, volume)
    return standardize(volume, pred.voted_label), pred


@dataclass
class EvalReport:
    slice_acc: float
    volume_acc: float
    n_slices: int
    n_volumes: int
    confusion: np.ndarray  # (8, 8), rows = true label, slice level

    def to_dict(self) -> dict:
        return {
            "slice_acc": self.slice_acc,
            "volume_acc": self.volume_acc,
            "n_slices": self.n_slices,
            "n_volumes": self.n_volumes,
            "confusion": self.confusion.tolist(),
        }


def score(probs: np.ndarray, labels: np.ndarray, volume_ids: np.ndarray) -> EvalReport:
    """Slice and voted-volume accuracy for stacked slice probabilities."""
    labels = np.asarray(labels)
    volume_ids = np.asarray(volume_ids)
    pred = probs.argmax(axis=1) if len(probs) else np.zeros(0, dtype=int)
    confusion = np.zeros((8, 8), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    correct_volumes = 0
    vol_list = np.unique(volume_ids)
    for vid in vol_list:
        sel = volume_ids == vid
        voted, _, _ = vote(probs[sel])
        correct_volumes += int(voted == labels[sel][0])
    n = len(labels)
    return EvalReport(
        slice_acc=float((pred == labels).mean()) if n else 0.0,
        volume_acc=correct_volumes / len(vol_list) if len(vol_list) else 0.0,
        n_slices=n,
        n_volumes=len(vol_list),
        confusion=confusion,
    )
