"""Single-file NIfTI-1 (``.nii``) reading and writing.

Only what the pipeline needs: 2D/3D scalar volumes, five datatypes, both
byte orders on input, little-endian float32 on output. Header fields the
pipeline does not interpret (qform/sform, descrip, intent, ...) are carried
through untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    MalformedHeaderError,
    TruncatedFileError,
    UnsupportedDatatypeError,
    UnsupportedRankError,
)

logger = logging.getLogger(__name__)

HEADER_SIZE = 348
DEFAULT_VOX_OFFSET = 352
MAGIC = b"n+1\x00"

header_dtd = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),  # 40
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),  # 70
    ("bitpix", "i2"),  # 72
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),  # 76
    ("vox_offset", "f4"),  # 108
    ("scl_slope", "f4"),  # 112
    ("scl_inter", "f4"),  # 116
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),  # 344
]
HEADER_DTYPE_LE = np.dtype(header_dtd).newbyteorder("<")
HEADER_DTYPE_BE = HEADER_DTYPE_LE.newbyteorder(">")
assert HEADER_DTYPE_LE.itemsize == HEADER_SIZE

# datatype code -> (numpy type, bitpix)
DATATYPES = {
    2: (np.uint8, 8),
    4: (np.int16, 16),
    8: (np.int32, 32),
    16: (np.float32, 32),
    64: (np.float64, 64),
}


@dataclass
class NiftiHeader:
    sizeof_hdr: int
    dim: tuple
    datatype: int
    bitpix: int
    pixdim: tuple
    vox_offset: float
    scl_slope: float
    scl_inter: float
    magic: bytes
    raw_bytes: bytes
    byteorder: str = "<"

    def record(self) -> np.ndarray:
        """The full header as a little-endian structured record (a copy)."""
        dt = HEADER_DTYPE_LE if self.byteorder == "<" else HEADER_DTYPE_BE
        rec = np.frombuffer(self.raw_bytes, dtype=dt, count=1)
        return rec.astype(HEADER_DTYPE_LE)


@dataclass
class Volume:
    """A ``(sx, sy, sz)`` float32 grid with voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    source_header: NiftiHeader | None = field(default=None, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"volume data must be 2D or 3D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ValueError(f"volume has an empty axis: {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("volume contains non-finite voxels")
        self.data = data
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def shape(self):
        return self.data.shape


def parse_header(raw: bytes) -> NiftiHeader:
    if len(raw) < HEADER_SIZE:
        raise TruncatedFileError(f"file shorter than the {HEADER_SIZE}-byte header")
    raw = bytes(raw[:HEADER_SIZE])
    for byteorder, dt in (("<", HEADER_DTYPE_LE), (">", HEADER_DTYPE_BE)):
        rec = np.frombuffer(raw, dtype=dt, count=1)[0]
        if int(rec["sizeof_hdr"]) == HEADER_SIZE:
            break
    else:
        raise MalformedHeaderError("sizeof_hdr is not 348 in either byte order")

    magic = bytes(rec["magic"]).ljust(4, b"\x00")
    if magic != MAGIC:
        raise MalformedHeaderError(f"bad magic {magic!r}, expected {MAGIC!r}")

    dim = tuple(int(d) for d in rec["dim"])
    rank = dim[0]
    if rank not in (2, 3):
        raise UnsupportedRankError(f"dim[0] = {rank}; only 2D and 3D volumes are supported")
    if any(d < 1 for d in dim[1 : rank + 1]):
        raise MalformedHeaderError(f"non-positive dimension in {dim[: rank + 1]}")

    datatype = int(rec["datatype"])
    if datatype not in DATATYPES:
        raise UnsupportedDatatypeError(f"datatype code {datatype} is not supported")
    bitpix = int(rec["bitpix"])
    if bitpix != DATATYPES[datatype][1]:
        raise MalformedHeaderError(f"bitpix {bitpix} inconsistent with datatype {datatype}")

    return NiftiHeader(
        sizeof_hdr=HEADER_SIZE,
        dim=dim,
        datatype=datatype,
        bitpix=bitpix,
        pixdim=tuple(float(p) for p in rec["pixdim"]),
        vox_offset=float(rec["vox_offset"]),
        scl_slope=float(rec["scl_slope"]),
        scl_inter=float(rec["scl_inter"]),
        magic=magic,
        raw_bytes=raw,
        byteorder=byteorder,
    )


def read_nifti(path) -> Volume:
    raw = Path(path).read_bytes()
    hdr = parse_header(raw)

    rank = hdr.dim[0]
    shape = tuple(hdr.dim[1 : rank + 1])
    if rank == 2:
        shape = shape + (1,)
    offset = int(hdr.vox_offset)
    if offset < HEADER_SIZE:
        offset = DEFAULT_VOX_OFFSET
    np_type, bitpix = DATATYPES[hdr.datatype]
    dt = np.dtype(np_type).newbyteorder(hdr.byteorder)
    count = int(np.prod(shape))
    nbytes = count * dt.itemsize
    if len(raw) < offset + nbytes:
        raise TruncatedFileError(
            f"{path}: need {nbytes} data bytes at offset {offset}, file has {max(len(raw) - offset, 0)}"
        )
    values = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
    # NIfTI stores x fastest.
    data = values.reshape(shape, order="F").astype(np.float32)
    if hdr.scl_slope != 0 and np.isfinite(hdr.scl_slope):
        slope = np.float32(hdr.scl_slope)
        inter = np.float32(hdr.scl_inter if np.isfinite(hdr.scl_inter) else 0.0)
        if slope != 1 or inter != 0:
            data = data * slope + inter
    data = np.ascontiguousarray(data, dtype=np.float32)

    # zero/NaN spacing is common in hand-made files; fall back to 1 mm
    spacing = [abs(p) if np.isfinite(p) and p != 0 else 1.0 for p in hdr.pixdim[1:4]]
    if rank == 2:
        spacing[2] = 1.0
    return Volume(data=data, spacing=tuple(spacing), source_header=hdr)


def build_header(volume: Volume) -> np.ndarray:
    """Little-endian header record for ``volume`` as it would be written."""
    if volume.source_header is not None:
        rec = volume.source_header.record()
    else:
        rec = np.zeros(1, dtype=HEADER_DTYPE_LE)
        rec["regular"] = b"r"
        rec["pixdim"][0][0] = 1.0  # qfac
        rec["xyzt_units"] = 2  # mm
    r = rec[0]
    sx, sy, sz = volume.data.shape
    r["sizeof_hdr"] = HEADER_SIZE
    r["dim"] = [3, sx, sy, sz, 1, 1, 1, 1]
    r["datatype"] = 16
    r["bitpix"] = 32
    r["pixdim"][1:4] = volume.spacing
    r["vox_offset"] = DEFAULT_VOX_OFFSET
    r["scl_slope"] = 1.0
    r["scl_inter"] = 0.0
    r["magic"] = MAGIC
    return rec


def write_nifti(volume: Volume, path) -> None:
    rec = build_header(volume)
    payload = np.asarray(volume.data, dtype="<f4").tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())
        fh.write(b"\x00" * (DEFAULT_VOX_OFFSET - HEADER_SIZE))
        fh.write(payload)
