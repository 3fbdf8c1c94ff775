"""Image containers and raster I/O.

Cubes are stored band-major: ``data`` has shape ``(bands, pixels)`` and pixel
``p`` sits at spatial location ``divmod(p, cols)`` (row-major). Every module
relies on this flattening, so masks and cubes always line up.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np


class FormatError(ValueError):
    """Raised for malformed or inconsistent image files."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ImageCube:
    data: np.ndarray
    rows: int
    cols: int
    band_centers: Optional[tuple] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2:
            raise ValueError(f"cube data must be 2-D (bands x pixels), got {data.shape}")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid dimensions must be positive")
        if data.shape[1] != self.rows * self.cols:
            raise ValueError(
                f"pixel count {data.shape[1]} != {self.rows}x{self.cols}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("cube contains non-finite values")
        if self.band_centers is not None:
            centers = tuple(float(c) for c in self.band_centers)
            if len(centers) != data.shape[0]:
                raise ValueError("band_centers length does not match band count")
            object.__setattr__(self, "band_centers", centers)
        object.__setattr__(self, "data", _frozen(data))

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def pixels(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return (self.bands, self.rows, self.cols)

    def as_3d(self) -> np.ndarray:
        """View as ``(bands, rows, cols)``."""
        return self.data.reshape(self.bands, self.rows, self.cols)

    @classmethod
    def from_3d(cls, arr, band_centers=None) -> "ImageCube":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        b, r, c = arr.shape
        return cls(arr.reshape(b, r * c), r, c, band_centers)

    def with_data(self, data) -> "ImageCube":
        """Same grid, new band data (band centers dropped if the band count changes)."""
        data = np.asarray(data, dtype=np.float64)
        centers = self.band_centers if data.shape[0] == self.bands else None
        return ImageCube(data, self.rows, self.cols, centers)


@dataclass(frozen=True)
class ChangeMask:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError("mask must be 2-D (rows x cols)")
        if not np.all((data == 0) | (data == 1)):
            raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "data", _frozen(data.astype(np.uint8)))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)


@dataclass(frozen=True)
class ChangeEnergyMap:
    data: np.ndarray
    dof: int

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2:
            raise ValueError("energy map must be 2-D (rows x cols)")
        if not np.all(np.isfinite(data)):
            raise ValueError("energy map contains non-finite values")
        if np.any(data < 0):
            raise ValueError("energy map must be nonnegative")
        if self.dof < 1:
            raise ValueError("dof must be positive")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def flat_index(i, j, cols: int):
    return np.asarray(i) * cols + np.asarray(j)


def grid_index(p, cols: int):
    return np.divmod(np.asarray(p), cols)


# ---------------------------------------------------------------------------
# key=value text files (headers, manifests, model configs)


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_kv(path) -> dict:
    return parse_kv(Path(path).read_text())


def write_kv(path, items: dict, comment: Optional[str] = None) -> None:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.extend(f"{k}={v}" for k, v in items.items())
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# cube I/O

_FLAT_MAGIC = "MRCDCUBE"
_FLAT_END = "end"


def _payload_to_cube(raw: bytes, bands, rows, cols, centers, where) -> ImageCube:
    expected = bands * rows * cols * 4
    if len(raw) != expected:
        raise FormatError(
            f"{where}: payload has {len(raw)} bytes, header implies {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{where}: payload contains non-finite values")
    return ImageCube(data.reshape(bands, rows * cols), rows, cols, centers)


def _positive_int(header: dict, key: str, where) -> int:
    try:
        value = int(header[key])
    except KeyError:
        raise FormatError(f"{where}: header missing {key!r}") from None
    except ValueError:
        raise FormatError(f"{where}: {key!r} is not an integer") from None
    if value < 1:
        raise FormatError(f"{where}: {key!r} must be positive")
    return value


def _check_writable(cube: ImageCube) -> np.ndarray:
    with np.errstate(over="ignore"):
        out = cube.data.astype("<f4")
    if not np.all(np.isfinite(cube.data)) or not np.all(np.isfinite(out)):
        raise FormatError("refusing to write non-finite values")
    return out


def _read_flat(path: Path) -> ImageCube:
    blob = path.read_bytes()
    header = {}
    pos = 0
    first = True
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise FormatError(f"{path}: header not terminated")
        try:
            line = blob[pos:nl].decode("ascii").strip()
        except UnicodeDecodeError:
            raise FormatError(f"{path}: header is not ASCII") from None
        pos = nl + 1
        if first:
            if line != _FLAT_MAGIC:
                raise FormatError(f"{path}: missing {_FLAT_MAGIC} magic line")
            first = False
            continue
        if line == _FLAT_END:
            break
        if "=" not in line:
            raise FormatError(f"{path}: malformed header line {line!r}")
        k, v = line.split("=", 1)
        header[k.strip()] = v.strip()
    if header.get("dtype", "f32le") != "f32le":
        raise FormatError(f"{path}: unsupported dtype {header['dtype']!r}")
    bands = _positive_int(header, "bands", path)
    rows = _positive_int(header, "rows", path)
    cols = _positive_int(header, "cols", path)
    centers = None
    if header.get("wavelengths"):
        centers = [float(w) for w in header["wavelengths"].split(",")]
        if len(centers) != bands:
            raise FormatError(f"{path}: wavelengths count != bands")
    return _payload_to_cube(blob[pos:], bands, rows, cols, centers, path)


def _write_flat(cube: ImageCube, path: Path) -> None:
    payload = _check_writable(cube)
    lines = [
        _FLAT_MAGIC,
        f"bands={cube.bands}",
        f"rows={cube.rows}",
        f"cols={cube.cols}",
        "dtype=f32le",
    ]
    if cube.band_centers is not None:
        lines.append("wavelengths=" + ",".join(repr(w) for w in cube.band_centers))
    lines.append(_FLAT_END)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(payload.tobytes())


def _envi_paths(path: Path) -> tuple:
    if path.suffix == ".hdr":
        return path, path.with_suffix(".raw")
    return path.with_suffix(".hdr"), path if path.suffix else path.with_suffix(".raw")


def _parse_envi_header(text: str, where) -> dict:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ENVI":
        raise FormatError(f"{where}: not an ENVI header")
    header = {}
    body = "\n".join(lines[1:])
    i = 0
    while i < len(body):
        eq = body.find("=", i)
        if eq < 0:
            break
        key = body[i:eq].strip().lower()
        j = eq + 1
        while j < len(body) and body[j] in " \t":
            j += 1
        if j < len(body) and body[j] == "{":
            close = body.find("}", j)
            if close < 0:
                raise FormatError(f"{where}: unterminated brace for {key!r}")
            value = body[j + 1:close]
            i = close + 1
        else:
            nl = body.find("\n", j)
            nl = len(body) if nl < 0 else nl
            value = body[j:nl]
            i = nl + 1
        header[key] = value.strip()
    return header


def _read_envi(path: Path) -> ImageCube:
    hdr_path, raw_path = _envi_paths(path)
    header = _parse_envi_header(hdr_path.read_text(), hdr_path)
    if header.get("interleave", "bsq").lower() != "bsq":
        raise FormatError(f"{hdr_path}: only interleave = bsq is supported")
    if header.get("data type", "4") != "4":
        raise FormatError(f"{hdr_path}: only data type = 4 (float32) is supported")
    if header.get("byte order", "0") != "0":
        raise FormatError(f"{hdr_path}: only byte order = 0 is supported")
    if int(header.get("header offset", "0")) != 0:
        raise FormatError(f"{hdr_path}: header offset is not supported")
    bands = _positive_int(header, "bands", hdr_path)
    rows = _positive_int(header, "lines", hdr_path)
    cols = _positive_int(header, "samples", hdr_path)
    centers = None
    if "wavelength" in header:
        centers = [float(w) for w in header["wavelength"].replace("\n", "").split(",") if w.strip()]
        if len(centers) != bands:
            raise FormatError(f"{hdr_path}: wavelength count != bands")
    return _payload_to_cube(raw_path.read_bytes(), bands, rows, cols, centers, raw_path)


def _write_envi(cube: ImageCube, path: Path) -> None:
    payload = _check_writable(cube)
    hdr_path, raw_path = _envi_paths(path)
    lines = [
        "ENVI",
        f"samples = {cube.cols}",
        f"lines = {cube.rows}",
        f"bands = {cube.bands}",
        "header offset = 0",
        "data type = 4",
        "interleave = bsq",
        "byte order = 0",
    ]
    if cube.band_centers is not None:
        lines.append("wavelength = {" + ", ".join(repr(w) for w in cube.band_centers) + "}")
    hdr_path.write_text("\n".join(lines) + "\n")
    raw_path.write_bytes(payload.tobytes())


CUBE_FORMATS = ("flat-binary", "envi-raw")


def _guess_format(path: Path) -> str:
    return "envi-raw" if path.suffix in (".hdr", ".raw") else "flat-binary"


def read_cube(path, format: Optional[str] = None) -> ImageCube:
    """Read a cube written by :func:`write_cube` or an ENVI float32 BSQ pair."""
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt == "flat-binary":
        return _read_flat(path)
    if fmt == "envi-raw":
        return _read_envi(path)
    raise ValueError(f"unknown cube format {fmt!r}; expected one of {CUBE_FORMATS}")


def write_cube(cube: ImageCube, path, format: Optional[str] = None) -> None:
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt == "flat-binary":
        _write_flat(cube, path)
    elif fmt == "envi-raw":
        _write_envi(cube, path)
    else:
        raise ValueError(f"unknown cube format {fmt!r}; expected one of {CUBE_FORMATS}")


# ---------------------------------------------------------------------------
# mask I/O (binary PGM)


def write_mask(mask: ChangeMask, path) -> None:
    header = f"P5\n{mask.cols} {mask.rows}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write((mask.data * 255).astype(np.uint8).tobytes())


def _pgm_tokens(blob: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            nl = blob.find(b"\n", pos)
            pos = len(blob) if nl < 0 else nl + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(blob[start:pos].decode("ascii"))
    return tokens, pos + 1  # single whitespace byte after maxval


def read_mask(path) -> ChangeMask:
    blob = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _pgm_tokens(blob, 4)
    if magic != "P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    payload = blob[pos:]
    if len(payload) != w * h:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {w * h}")
    values = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    bad = ~np.isin(values, (0, 255))
    if bad.any():
        raise FormatError(
            f"{path}: non-binary pixel value {int(values[bad][0])} in change mask"
        )
    return ChangeMask((values == 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# plain-text matrices (responses, kernels, endmembers)


def read_matrix(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, dtype=np.float64, ndmin=2))


def write_matrix(path, matrix) -> None:
    np.savetxt(path, np.atleast_2d(matrix), fmt="%.17g")
