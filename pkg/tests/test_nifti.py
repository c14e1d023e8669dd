import struct

import numpy as np
import pytest

from cmr_orient import orientation
from cmr_orient.errors import (
    MalformedHeaderError,
    TruncatedFileError,
    UnsupportedDatatypeError,
    UnsupportedRankError,
)
from cmr_orient.nifti import Volume, read_nifti, write_nifti


def raw_nifti(data, datatype, np_type, bitpix, dim, slope=0.0, inter=0.0, endian="<", magic=b"n+1\x00", vox_offset=352.0):
    """Assemble a .nii byte string field by field at the standard offsets."""
    hdr = bytearray(348)
    struct.pack_into(endian + "i", hdr, 0, 348)
    struct.pack_into(endian + "8h", hdr, 40, *dim)
    struct.pack_into(endian + "h", hdr, 70, datatype)
    struct.pack_into(endian + "h", hdr, 72, bitpix)
    struct.pack_into(endian + "8f", hdr, 76, 1.0, 1.5, 2.0, 3.0, 1, 1, 1, 1)
    struct.pack_into(endian + "f", hdr, 108, vox_offset)
    struct.pack_into(endian + "f", hdr, 112, slope)
    struct.pack_into(endian + "f", hdr, 116, inter)
    hdr[344:348] = magic
    payload = np.asarray(data, dtype=np.dtype(np_type).newbyteorder(endian)).tobytes(order="F")
    return bytes(hdr) + b"\x00" * 4 + payload


def test_float32_example(tmp_path):
    values = np.arange(32, dtype=np.float32).reshape(4, 4, 2, order="F") * 0.5
    p = tmp_path / "a.nii"
    p.write_bytes(raw_nifti(values, 16, np.float32, 32, [3, 4, 4, 2, 1, 1, 1, 1]))
    vol = read_nifti(p)
    assert vol.shape == (4, 4, 2)
    assert np.array_equal(vol.data, values)
    assert vol.spacing == (1.5, 2.0, 3.0)


def test_scl_slope_and_inter(tmp_path):
    p = tmp_path / "s.nii"
    p.write_bytes(raw_nifti(np.full((1, 1, 1), 3), 4, np.int16, 16, [3, 1, 1, 1, 1, 1, 1, 1], slope=2.0, inter=1.0))
    assert read_nifti(p).data[0, 0, 0] == 7.0


@pytest.mark.parametrize("code,np_type,bitpix", [(2, np.uint8, 8), (4, np.int16, 16), (8, np.int32, 32), (64, np.float64, 64)])
def test_decodes_supported_datatypes(tmp_path, code, np_type, bitpix):
    values = np.arange(6).reshape(2, 3, 1)
    p = tmp_path / "d.nii"
    p.write_bytes(raw_nifti(values, code, np_type, bitpix, [3, 2, 3, 1, 1, 1, 1, 1]))
    vol = read_nifti(p)
    assert vol.data.dtype == np.float32
    assert np.array_equal(vol.data, values.astype(np.float32))


def test_2d_file_promoted(tmp_path):
    values = np.arange(6, dtype=np.float32).reshape(2, 3)
    p = tmp_path / "two.nii"
    p.write_bytes(raw_nifti(values, 16, np.float32, 32, [2, 2, 3, 1, 1, 1, 1, 1]))
    vol = read_nifti(p)
    assert vol.shape == (2, 3, 1)
    assert np.array_equal(vol.data[:, :, 0], values)


def test_unsupported_datatype(tmp_path):
    p = tmp_path / "c.nii"
    p.write_bytes(raw_nifti(np.zeros((1, 1, 1)), 128, np.uint8, 24, [3, 1, 1, 1, 1, 1, 1, 1]))
    with pytest.raises(UnsupportedDatatypeError):
        read_nifti(p)


def test_rank_4_rejected(tmp_path):
    p = tmp_path / "r.nii"
    p.write_bytes(raw_nifti(np.zeros((1, 1, 1, 2)), 16, np.float32, 32, [4, 1, 1, 1, 2, 1, 1, 1]))
    with pytest.raises(UnsupportedRankError):
        read_nifti(p)


def test_bad_sizeof_hdr_and_magic(tmp_path):
    good = raw_nifti(np.zeros((1, 1, 1)), 16, np.float32, 32, [3, 1, 1, 1, 1, 1, 1, 1])
    p = tmp_path / "m.nii"
    p.write_bytes(b"\x00\x00\x00\x00" + good[4:])
    with pytest.raises(MalformedHeaderError):
        read_nifti(p)
    p.write_bytes(raw_nifti(np.zeros((1, 1, 1)), 16, np.float32, 32, [3, 1, 1, 1, 1, 1, 1, 1], magic=b"ni1\x00"))
    with pytest.raises(MalformedHeaderError):
        read_nifti(p)


def test_inconsistent_bitpix(tmp_path):
    p = tmp_path / "b.nii"
    p.write_bytes(raw_nifti(np.zeros((1, 1, 1)), 16, np.float32, 16, [3, 1, 1, 1, 1, 1, 1, 1]))
    with pytest.raises(MalformedHeaderError):
        read_nifti(p)


def test_truncated(tmp_path):
    good = raw_nifti(np.zeros((4, 4, 2)), 16, np.float32, 32, [3, 4, 4, 2, 1, 1, 1, 1])
    p = tmp_path / "t.nii"
    p.write_bytes(good[:-5])
    with pytest.raises(TruncatedFileError):
        read_nifti(p)
    p.write_bytes(good[:100])
    with pytest.raises(TruncatedFileError):
        read_nifti(p)


def test_big_endian_matches_little_endian(tmp_path):
    values = np.random.default_rng(1).normal(size=(3, 5, 2)).astype(np.float32)
    le, be = tmp_path / "le.nii", tmp_path / "be.nii"
    dim = [3, 3, 5, 2, 1, 1, 1, 1]
    le.write_bytes(raw_nifti(values, 16, np.float32, 32, dim))
    be.write_bytes(raw_nifti(values, 16, np.float32, 32, dim, endian=">"))
    a, b = read_nifti(le), read_nifti(be)
    assert np.array_equal(a.data, b.data)
    assert a.spacing == b.spacing


def test_writer_layout(tmp_path):
    vol = Volume(np.zeros((2, 3, 4), dtype=np.float32), spacing=(0.5, 0.75, 2.0))
    p = tmp_path / "w.nii"
    write_nifti(vol, p)
    raw = p.read_bytes()
    assert len(raw) == 352 + 2 * 3 * 4 * 4
    assert struct.unpack_from("<i", raw, 0)[0] == 348
    assert list(struct.unpack_from("<8h", raw, 40)) == [3, 2, 3, 4, 1, 1, 1, 1]
    assert struct.unpack_from("<h", raw, 70)[0] == 16
    assert struct.unpack_from("<h", raw, 72)[0] == 32
    assert struct.unpack_from("<3f", raw, 80) == (0.5, 0.75, 2.0)
    assert struct.unpack_from("<f", raw, 108)[0] == 352.0
    assert struct.unpack_from("<2f", raw, 112) == (1.0, 0.0)
    assert raw[148:228] == b"\x00" * 80  # descrip
    assert raw[344:348] == b"n+1\x00"


def test_passthrough_of_unrecognised_fields(tmp_path):
    src = bytearray(raw_nifti(np.arange(4).reshape(2, 2, 1), 4, np.int16, 16, [3, 2, 2, 1, 1, 1, 1, 1], slope=2.0, inter=1.0))
    src[148:160] = b"hello header"
    struct.pack_into("<h", src, 252, 1)  # qform_code
    struct.pack_into("<3f", src, 256, 0.1, 0.2, 0.3)  # quatern_b..d
    p, q = tmp_path / "src.nii", tmp_path / "dst.nii"
    p.write_bytes(bytes(src))
    vol = read_nifti(p)
    write_nifti(vol, q)
    out = q.read_bytes()
    assert out[148:160] == b"hello header"
    assert out[252:254] == src[252:254]
    assert out[256:268] == src[256:268]
    assert struct.unpack_from("<2f", out, 112) == (1.0, 0.0)
    assert struct.unpack_from("<h", out, 70)[0] == 16
    assert np.array_equal(read_nifti(q).data, vol.data)


def random_volumes(n=20, seed=0):
    rng = np.random.default_rng(seed)
    shapes = [(1, 1, 1), (5, 3, 1), (2, 7, 1), (4, 4, 1)]
    while len(shapes) < n:
        shapes.append(tuple(int(s) for s in rng.integers(1, 12, size=3)))
    for shape in shapes:
        data = (rng.normal(size=shape) * 10.0 ** rng.integers(-3, 4)).astype(np.float32)
        spacing = tuple(float(s) for s in rng.uniform(0.2, 5, size=3).astype(np.float32))
        yield Volume(data, spacing)


def test_round_trip_bit_exact(tmp_path):
    for i, vol in enumerate(random_volumes()):
        p = tmp_path / f"v{i}.nii"
        write_nifti(vol, p)
        back = read_nifti(p)
        assert back.shape == vol.shape
        assert back.data.tobytes() == vol.data.tobytes()
        assert back.spacing == vol.spacing
        # rewriting with the read header attached yields the same bytes
        q = tmp_path / f"w{i}.nii"
        write_nifti(back, q)
        assert q.read_bytes() == p.read_bytes()


def test_orientation_round_trip_through_disk(tmp_path):
    vol = next(random_volumes(seed=3))
    data = np.random.default_rng(3).normal(size=(5, 3, 2)).astype(np.float32)
    for k in range(8):
        p = tmp_path / f"o{k}.nii"
        write_nifti(Volume(orientation.apply_orientation(data, k), vol.spacing), p)
        restored = orientation.apply_orientation(read_nifti(p).data, orientation.inverse(k))
        assert restored.tobytes() == data.tobytes()


def test_volume_rejects_non_finite():
    with pytest.raises(ValueError):
        Volume(np.array([[[np.nan]]], dtype=np.float32))
