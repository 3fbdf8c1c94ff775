import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mrcd.image import (
    ChangeEnergyMap,
    ChangeMask,
    FormatError,
    ImageCube,
    flat_index,
    grid_index,
    read_cube,
    read_mask,
    write_cube,
    write_mask,
)


@pytest.mark.parametrize("fmt,suffix", [("flat-binary", ".cube"), ("envi-raw", ".raw")])
def test_roundtrip_2band_2x2(tmp_path, fmt, suffix):
    cube = ImageCube(np.arange(8, dtype=np.float32).reshape(2, 4) * 0.25, 2, 2)
    path = tmp_path / ("c" + suffix)
    write_cube(cube, path, fmt)
    back = read_cube(path, fmt)
    assert back.shape == (2, 2, 2)
    assert np.array_equal(back.data, cube.data)


def test_single_zero_pixel(tmp_path):
    write_cube(ImageCube(np.zeros((1, 1)), 1, 1), tmp_path / "z.cube")
    assert read_cube(tmp_path / "z.cube").data[0, 0] == 0.0


def test_random_cube_roundtrip(tmp_path, rng):
    data = rng.standard_normal((3, 20)).astype(np.float32)
    cube = ImageCube(data, 4, 5, band_centers=(450.0, 550.0, 650.0))
    for name in ("r.cube", "r.hdr"):
        write_cube(cube, tmp_path / name)
        back = read_cube(tmp_path / name)
        assert np.array_equal(back.data, cube.data)
        assert back.band_centers == cube.band_centers


def test_header_payload_mismatch(tmp_path):
    cube = ImageCube(np.ones((2, 4)), 2, 2)
    write_cube(cube, tmp_path / "c.hdr")
    hdr = (tmp_path / "c.hdr").read_text().replace("bands = 2", "bands = 3")
    (tmp_path / "c.hdr").write_text(hdr)
    with pytest.raises(FormatError, match="bytes"):
        read_cube(tmp_path / "c.hdr")

    write_cube(cube, tmp_path / "c.cube")
    blob = (tmp_path / "c.cube").read_bytes().replace(b"bands=2", b"bands=3")
    (tmp_path / "c.cube").write_bytes(blob)
    with pytest.raises(FormatError, match="bytes"):
        read_cube(tmp_path / "c.cube")


def test_envi_header_93_band_pavia_shape(tmp_path):
    hdr = ("ENVI\nsamples = 330\nlines = 610\nbands = 93\nheader offset = 0\n"
           "data type = 4\ninterleave = bsq\nbyte order = 0\n")
    (tmp_path / "pavia.hdr").write_text(hdr)
    (tmp_path / "pavia.raw").write_bytes(np.zeros(93 * 610 * 330, "<f4").tobytes())
    cube = read_cube(tmp_path / "pavia.hdr")
    assert cube.bands == 93 and cube.pixels == 201300


def test_nonfinite_rejected(tmp_path):
    with pytest.raises(ValueError):
        ImageCube(np.array([[0.0, np.nan]]), 1, 2)
    # a file carrying a NaN is rejected on read as well
    raw = np.array([1.0, np.nan], "<f4").tobytes()
    (tmp_path / "bad.cube").write_bytes(b"MRCDCUBE\nbands=1\nrows=1\ncols=2\nend\n" + raw)
    with pytest.raises(FormatError, match="non-finite"):
        read_cube(tmp_path / "bad.cube")


def test_float32_overflow_rejected_on_write(tmp_path):
    with pytest.raises(FormatError):
        write_cube(ImageCube(np.array([[1e300]]), 1, 1), tmp_path / "big.cube")


def test_malformed_headers(tmp_path):
    (tmp_path / "a.cube").write_bytes(b"NOTACUBE\nend\n")
    with pytest.raises(FormatError):
        read_cube(tmp_path / "a.cube")
    (tmp_path / "b.cube").write_bytes(b"MRCDCUBE\nbands=x\nrows=1\ncols=1\nend\n")
    with pytest.raises(FormatError):
        read_cube(tmp_path / "b.cube")
    (tmp_path / "c.hdr").write_text("ENVI\nsamples = 1\nlines = 1\nbands = 1\ninterleave = bip\n")
    (tmp_path / "c.raw").write_bytes(b"\0" * 4)
    with pytest.raises(FormatError, match="bsq"):
        read_cube(tmp_path / "c.hdr")


@pytest.mark.parametrize("mask", [np.zeros((3, 3)), np.array([[1, 0], [0, 1]])])
def test_mask_roundtrip(tmp_path, mask):
    write_mask(ChangeMask(mask), tmp_path / "m.pgm")
    assert np.array_equal(read_mask(tmp_path / "m.pgm").data, mask)


def test_mask_value_7_rejected(tmp_path):
    (tmp_path / "m.pgm").write_bytes(b"P5\n2 1\n255\n" + bytes([0, 7]))
    with pytest.raises(FormatError, match="non-binary"):
        read_mask(tmp_path / "m.pgm")


def test_type_invariants():
    with pytest.raises(ValueError):
        ChangeMask(np.array([[0, 2]]))
    with pytest.raises(ValueError):
        ChangeEnergyMap(np.array([[-1.0]]), 1)
    with pytest.raises(ValueError):
        ImageCube(np.ones((2, 5)), 2, 2)
    cube = ImageCube(np.ones((1, 4)), 2, 2)
    with pytest.raises(ValueError):
        cube.data[0, 0] = 3.0


@given(st.integers(1, 40), st.integers(1, 40))
def test_flat_index_bijective(rows, cols):
    p = np.arange(rows * cols)
    i, j = grid_index(p, cols)
    assert np.array_equal(flat_index(i, j, cols), p)
    assert i.max() == rows - 1 and j.max() == cols - 1


@given(st.integers(1, 6), st.integers(1, 3), st.integers(1, 3))
def test_as_3d_matches_row_major(bands, rows, cols):
    data = np.arange(bands * rows * cols, dtype=float).reshape(bands, -1)
    cube = ImageCube(data, rows, cols)
    arr = cube.as_3d()
    for p in range(rows * cols):
        i, j = divmod(p, cols)
        assert np.array_equal(arr[:, i, j], data[:, p])
    assert np.array_equal(ImageCube.from_3d(arr).data, data)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 12)),
              elements=st.floats(-1e6, 1e6, width=32)),
       st.sampled_from(["x.cube", "x.hdr"]))
def test_roundtrip_bit_exact(tmp_path_factory, data, name):
    d = tmp_path_factory.mktemp("rt")
    cube = ImageCube(data, 1, data.shape[1])
    write_cube(cube, d / name)
    back = read_cube(d / name)
    assert back.data.astype(np.float32).tobytes() == data.tobytes()
