"""Dataset manifests: one JSON object per line describing one volume."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from . import orientation
from .errors import ManifestError

MODALITIES = ("bssfp", "t2", "lge")


@dataclass(frozen=True)
class Record:
    """One volume on disk.

    ``transform`` is an orientation applied on load; it is non-zero only for
    records produced by orientation expansion, where the file itself is
    canonical and ``orientation_label == transform``.
    """

    path: str
    patient_id: str
    modality: str
    orientation_label: int
    transform: int = 0

    def __post_init__(self):
        if not self.patient_id:
            raise ManifestError(f"empty patient_id for {self.path}")
        if self.modality not in MODALITIES:
            raise ManifestError(f"unknown modality {self.modality!r}; expected one of {MODALITIES}")
        try:
            orientation.check_label(self.orientation_label)
            orientation.check_label(self.transform)
        except (ValueError, TypeError) as exc:
            raise ManifestError(f"{self.path}: {exc}") from None

    def to_dict(self) -> dict:
        out = {
            "path": self.path,
            "patient_id": self.patient_id,
            "modality": self.modality,
            "orientation_label": self.orientation_label,
        }
        if self.transform:
            out["transform"] = self.transform
        return out

    def with_path(self, path) -> "Record":
        return replace(self, path=str(path))


@dataclass
class DatasetManifest:
    records: list

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def patients(self) -> list:
        return sorted({r.patient_id for r in self.records})

    def subset(self, patient_ids) -> "DatasetManifest":
        keep = set(patient_ids)
        return DatasetManifest([r for r in self.records if r.patient_id in keep])


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Read a JSONL manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rec = Record(
                path=str(obj["path"]),
                patient_id=str(obj["patient_id"]),
                modality=str(obj["modality"]),
                orientation_label=obj["orientation_label"],
                transform=obj.get("transform", 0),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ManifestError(f"{path}:{lineno}: bad record ({exc})") from None
        file_path = Path(rec.path)
        if not file_path.is_absolute():
            rec = rec.with_path(path.parent / file_path)
        if check_files and not Path(rec.path).exists():
            raise ManifestError(f"{path}:{lineno}: missing file {rec.path}")
        records.append(rec)
    return DatasetManifest(records)


def save_manifest(manifest: DatasetManifest, path, relative_to=None) -> None:
    """Write JSONL; paths are made relative to ``relative_to`` when given."""
    lines = []
    for rec in manifest.records:
        d = rec.to_dict()
        if relative_to is not None:
            try:
                d["path"] = str(Path(rec.path).resolve().relative_to(Path(relative_to).resolve()))
            except ValueError:
                pass
        lines.append(json.dumps(d))
    Path(path).write_text("".join(line + "\n" for line in lines))
