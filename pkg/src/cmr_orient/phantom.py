"""Synthetic short-axis cardiac phantoms in canonical orientation.

Each slice shows an elliptical torso that is wider than tall, a left
ventricle (myocardial ring around a blood pool) right of centre, a crescent
right ventricle to its left, and a brightness ramp that increases from top
to bottom. Together these cues make all eight orientations of a slice
distinguishable. Geometry depends only on ``(seed, patient_index)``, so the
same patient looks the same in every modality; contrast and noise depend on
the modality as well.

Randomness comes from numpy's PCG64 seeded through ``SeedSequence``, which is
specified and portable across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError, TooFewPatientsError
from .manifest import MODALITIES, DatasetManifest, Record, save_manifest
from .nifti import Volume, write_nifti

INTENSITY_SCALE = 1000.0
SPACING = (1.25, 1.25, 8.0)

# tissue -> relative intensity, per modality; myocardium stays darker than the
# surrounding body in every modality, whatever the per-patient jitter
CONTRAST = {
    "bssfp": {"body": 0.35, "blood": 1.00, "myo": 0.22, "rv": 0.95, "scar": None},
    "t2": {"body": 0.50, "blood": 0.85, "myo": 0.30, "rv": 0.80, "scar": None},
    "lge": {"body": 0.30, "blood": 0.55, "myo": 0.08, "rv": 0.50, "scar": 1.00},
}
MODALITY_CODE = {m: i for i, m in enumerate(MODALITIES)}


@dataclass(frozen=True)
class PhantomConfig:
    num_patients: int = 45
    slices_per_volume: int = 8
    size: tuple = (96, 96)
    modality: str = "bssfp"
    noise_sigma: float = 0.03
    seed: int = 42

    def __post_init__(self):
        if self.num_patients < 2:
            raise TooFewPatientsError(f"need at least 2 patients, got {self.num_patients}")
        if self.slices_per_volume < 1:
            raise DataError("slices_per_volume must be >= 1")
        if len(self.size) != 2 or min(self.size) < 8:
            raise DataError(f"size must be two integers >= 8, got {self.size}")
        if self.modality not in CONTRAST:
            raise DataError(f"unknown modality {self.modality!r}")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")


def _rng(*key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


def _geometry(seed: int, patient_index: int) -> dict:
    g = _rng(seed, patient_index, 0)
    return {
        "body_c": (0.5 + g.uniform(-0.02, 0.02), 0.52 + g.uniform(-0.02, 0.02)),
        "body_r": (0.44 + g.uniform(-0.02, 0.02), 0.33 + g.uniform(-0.02, 0.02)),
        "lv_c": (0.60 + g.uniform(-0.03, 0.03), 0.50 + g.uniform(-0.03, 0.03)),
        "lv_r": 0.14 + g.uniform(-0.015, 0.015),
        "lv_aspect": 1.0 + g.uniform(-0.08, 0.08),
        "wall": 0.045 + g.uniform(-0.007, 0.007),
        "rv_gap": 0.02 + g.uniform(0.0, 0.02),
        "rv_r": (0.10 + g.uniform(-0.015, 0.015), 0.17 + g.uniform(-0.02, 0.02)),
        "gain": 1.0 + g.uniform(-0.1, 0.1),
        "ramp": 0.9 + g.uniform(-0.15, 0.15),
        "tissue_jitter": g.uniform(-0.04, 0.04, size=4),
    }


def _slice(geo: dict, contrast: dict, u, v, frac: float, scar_angle: float):
    """One noiseless slice; ``u``/``v`` are normalised x/y coordinates, ``frac`` runs base (0) to apex (1)."""
    j_body, j_blood, j_myo, j_rv = geo["tissue_jitter"]
    img = np.zeros(u.shape, dtype=np.float64)

    bx, by = geo["body_c"]
    ax, ay = geo["body_r"]
    body = ((u - bx) / ax) ** 2 + ((v - by) / ay) ** 2 <= 1.0
    img[body] = contrast["body"] + j_body

    cx, cy = geo["lv_c"]
    r_out = geo["lv_r"] * (1.0 - 0.45 * frac)
    r_in = max(r_out - geo["wall"], 0.25 * r_out)
    d_lv = np.sqrt(((u - cx) / geo["lv_aspect"]) ** 2 + ((v - cy) * geo["lv_aspect"]) ** 2)
    myo = d_lv <= r_out
    pool = d_lv <= r_in

    rv_scale = 1.0 - 0.6 * frac
    rx, ry = geo["rv_r"][0] * rv_scale, geo["rv_r"][1] * rv_scale
    rv_cx = cx - r_out - geo["rv_gap"] - 0.4 * rx
    rv = (((u - rv_cx) / rx) ** 2 + ((v - cy) / ry) ** 2 <= 1.0) & (d_lv > r_out + 0.5 * geo["rv_gap"]) & (u < cx)

    img[rv] = contrast["rv"] + j_rv
    img[myo] = contrast["myo"] + j_myo
    img[pool] = contrast["blood"] + j_blood
    if contrast["scar"] is not None:
        ang = np.arctan2(v - cy, u - cx)
        diff = np.angle(np.exp(1j * (ang - scar_angle)))
        img[myo & ~pool & (np.abs(diff) < np.pi / 5)] = contrast["scar"]

    # smooth top-to-bottom ramp over the whole field of view
    img *= geo["gain"] * (1.0 - 0.5 * geo["ramp"] + geo["ramp"] * v)
    return ndimage.gaussian_filter(img, 0.7)


def generate_phantom(config: PhantomConfig, patient_index: int) -> Volume:
    if not 0 <= patient_index < config.num_patients:
        raise DataError(f"patient_index {patient_index} out of range [0, {config.num_patients})")
    sx, sy = (int(s) for s in config.size)
    sz = config.slices_per_volume
    geo = _geometry(config.seed, patient_index)
    rng = _rng(config.seed, patient_index, 1 + MODALITY_CODE[config.modality])
    scar_angle = rng.uniform(-np.pi, np.pi)
    contrast = CONTRAST[config.modality]

    u, v = np.meshgrid((np.arange(sx) + 0.5) / sx, (np.arange(sy) + 0.5) / sy, indexing="ij")
    data = np.empty((sx, sy, sz), dtype=np.float64)
    for z in range(sz):
        frac = z / (sz - 1) if sz > 1 else 0.0
        data[:, :, z] = _slice(geo, contrast, u, v, frac, scar_angle)
    if config.noise_sigma > 0:
        data += rng.normal(0.0, config.noise_sigma, size=data.shape)
    np.clip(data, 0.0, None, out=data)
    return Volume((data * INTENSITY_SCALE).astype(np.float32), spacing=SPACING)


def patient_id(index: int) -> str:
    return f"patient{index + 1:03d}"


def generate_dataset(config: PhantomConfig, out_dir) -> DatasetManifest:
    """Write one ``.nii`` per patient plus ``manifest.jsonl`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(config.num_patients):
        path = out_dir / f"{config.modality}_{patient_id(i)}.nii"
        write_nifti(generate_phantom(config, i), path)
        records.append(Record(str(path), patient_id(i), config.modality, 0))
    manifest = DatasetManifest(records)
    save_manifest(manifest, out_dir / "manifest.jsonl", relative_to=out_dir)
    return manifest
