"""Physical-spaced 2D rasters and their file formats.

Arrays are stored as ``(height, width)`` numpy arrays (row-major). Pixel
``(row, col)`` has its center at physical position
``(x, y) = (col * spacing_x, row * spacing_y)`` in millimetres.

Three formats are supported:

* FLATGRID v1 (read/write): one ASCII header line
  ``FLATGRID v1 <width> <height> <spacing_x> <spacing_y> <dtype>\\n`` followed by
  a raw little-endian payload (``float64`` for images, ``uint8`` for labels).
* NIfTI-1 single-file (read only, optionally gzipped).
* Binary PGM (P5, write only) for quick looks.
"""
from __future__ import annotations

import gzip
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

LABEL_VALUES = (0, 1, 2, 4)
_MAX_PIXELS = 2**31 - 1

_FLAT_MAGIC = "FLATGRID"
_FLAT_VERSION = "v1"
_FLAT_DTYPES = {"float64": np.dtype("<f8"), "uint8": np.dtype("u1")}


class GridError(ValueError):
    """Raised for malformed grids, headers or payloads."""


@dataclass(frozen=True)
class GridGeometry:
    width: int
    height: int
    spacing_x: float = 1.0
    spacing_y: float = 1.0

    def __post_init__(self):
        for name in ("width", "height"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise GridError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.width * self.height > _MAX_PIXELS:
            raise GridError("grid has too many pixels")
        for name in ("spacing_x", "spacing_y"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0:
                raise GridError(f"{name} must be finite and > 0, got {v!r}")
            object.__setattr__(self, name, v)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def pixel_area(self) -> float:
        return self.spacing_x * self.spacing_y

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical ``(x, y)`` pixel-center coordinate arrays of shape ``(height, width)``."""
        x = np.arange(self.width) * self.spacing_x
        y = np.arange(self.height) * self.spacing_y
        return np.meshgrid(x, y)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ImageGrid:
    geometry: GridGeometry
    intensities: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.intensities, dtype=np.float64)
        if a.ndim == 1:
            a = a.reshape(self.geometry.shape)
        if a.shape != self.geometry.shape:
            raise GridError(f"intensity shape {a.shape} does not match geometry {self.geometry.shape}")
        if not np.all(np.isfinite(a)):
            raise GridError("image contains non-finite values")
        object.__setattr__(self, "intensities", _frozen(a))

    def __eq__(self, other):
        return (isinstance(other, ImageGrid) and self.geometry == other.geometry
                and np.array_equal(self.intensities, other.intensities))

    @property
    def array(self) -> np.ndarray:
        return self.intensities

    def with_values(self, values: np.ndarray) -> "ImageGrid":
        return ImageGrid(self.geometry, values)


@dataclass(frozen=True, eq=False)
class LabelGrid:
    geometry: GridGeometry
    labels: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.ndim == 1:
            raw = raw.reshape(self.geometry.shape)
        if raw.shape != self.geometry.shape:
            raise GridError(f"label shape {raw.shape} does not match geometry {self.geometry.shape}")
        bad = ~np.isin(raw, LABEL_VALUES)
        if bad.any():
            raise GridError(f"illegal label value(s): {sorted(set(np.asarray(raw)[bad].tolist()))}")
        object.__setattr__(self, "labels", _frozen(raw.astype(np.uint8)))

    def __eq__(self, other):
        return (isinstance(other, LabelGrid) and self.geometry == other.geometry
                and np.array_equal(self.labels, other.labels))

    @property
    def array(self) -> np.ndarray:
        return self.labels


Grid = Union[ImageGrid, LabelGrid]


def check_same_geometry(*items) -> GridGeometry:
    """Return the shared geometry of ``items`` or raise :class:`GridError`."""
    geoms = [it.geometry for it in items]
    for g in geoms[1:]:
        if g != geoms[0]:
            raise GridError(f"geometry mismatch: {geoms[0]} vs {g}")
    return geoms[0]


# ---------------------------------------------------------------- file output

def _atomic_write(path: Union[str, os.PathLike], data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_grid(grid: Grid, path) -> None:
    """Write ``grid`` as FLATGRID v1."""
    g = grid.geometry
    if isinstance(grid, ImageGrid):
        dtype_name, payload = "float64", grid.intensities.astype("<f8").tobytes()
    elif isinstance(grid, LabelGrid):
        dtype_name, payload = "uint8", grid.labels.astype("u1").tobytes()
    else:
        raise TypeError(f"cannot save {type(grid).__name__}")
    header = f"{_FLAT_MAGIC} {_FLAT_VERSION} {g.width} {g.height} {g.spacing_x!r} {g.spacing_y!r} {dtype_name}\n"
    _atomic_write(path, header.encode("ascii") + payload)


def save_pgm(image: ImageGrid, path, window: tuple[float, float]) -> None:
    """Write an 8-bit binary PGM using a linear intensity window ``(lo, hi)``."""
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise GridError(f"window requires lo < hi, got ({lo}, {hi})")
    scaled = np.clip((image.intensities - lo) / (hi - lo), 0.0, 1.0)
    data = np.round(255.0 * scaled).astype(np.uint8)
    g = image.geometry
    _atomic_write(path, f"P5\n{g.width} {g.height}\n255\n".encode("ascii") + data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM written by :func:`save_pgm` (8-bit, no comments)."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise GridError("not a P5 PGM file")
    w, h = map(int, parts[1].split())
    if int(parts[2]) != 255:
        raise GridError("only 8-bit PGM supported")
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


# ----------------------------------------------------------------- file input

def load_grid(path, kind: str = "image", slice_index: int | None = None) -> Grid:
    """Load a FLATGRID or NIfTI-1 file as an image or label grid.

    Parameters
    ----------
    path : path-like
    kind : {"image", "labels"}
    slice_index : int, optional
        Axial plane to extract when the NIfTI file holds a 3D volume.
    """
    if kind not in ("image", "labels"):
        raise ValueError(f"kind must be 'image' or 'labels', got {kind!r}")
    with open(path, "rb") as fh:
        head = fh.read(len(_FLAT_MAGIC))
    if head == _FLAT_MAGIC.encode("ascii"):
        geometry, values = _read_flatgrid(path)
    else:
        geometry, values = _read_nifti(path, slice_index)
    if kind == "image":
        return ImageGrid(geometry, values.astype(np.float64))
    if np.issubdtype(values.dtype, np.floating):
        if not np.all(np.isfinite(values)) or np.any(values != np.round(values)):
            raise GridError("label file contains non-integer values")
    return LabelGrid(geometry, values)


def _read_flatgrid(path) -> tuple[GridGeometry, np.ndarray]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise GridError("FLATGRID header is not newline-terminated")
    try:
        fields = raw[:nl].decode("ascii").split(" ")
    except UnicodeDecodeError as exc:
        raise GridError("FLATGRID header is not ASCII") from exc
    if len(fields) != 7 or fields[0] != _FLAT_MAGIC or fields[1] != _FLAT_VERSION:
        raise GridError(f"malformed FLATGRID header: {raw[:nl]!r}")
    try:
        width, height = int(fields[2]), int(fields[3])
        sx, sy = float(fields[4]), float(fields[5])
    except ValueError as exc:
        raise GridError(f"malformed FLATGRID header: {raw[:nl]!r}") from exc
    dtype = _FLAT_DTYPES.get(fields[6])
    if dtype is None:
        raise GridError(f"unsupported FLATGRID dtype {fields[6]!r}")
    geometry = GridGeometry(width, height, sx, sy)
    payload = raw[nl + 1:]
    expected = width * height * dtype.itemsize
    if len(payload) != expected:
        raise GridError(f"FLATGRID payload has {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    if dtype.kind == "f" and not np.all(np.isfinite(values)):
        raise GridError("non-finite pixel value in image payload")
    return geometry, values


# NIfTI-1 datatype code -> numpy type; only the types we accept.
_NIFTI_DTYPES = {
    2: "u1",    # uint8
    256: "i1",  # int8
    4: "i2",    # int16
    512: "u2",  # uint16
    16: "f4",   # float32
    64: "f8",   # float64
}


def _read_nifti(path, slice_index: int | None) -> tuple[GridGeometry, np.ndarray]:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 348:
        raise GridError("file too short for a NIfTI-1 header")
    for endian in ("<", ">"):
        if struct.unpack(endian + "i", raw[:4])[0] == 348:
            break
    else:
        raise GridError("unrecognised file format (neither FLATGRID nor NIfTI-1)")
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise GridError(f"bad NIfTI magic {magic!r}")
    if magic == b"ni1\x00":
        raise GridError("two-file NIfTI (.hdr/.img) is not supported")
    dim = struct.unpack(endian + "8h", raw[40:56])
    datatype, _bitpix = struct.unpack(endian + "2h", raw[70:74])
    pixdim = struct.unpack(endian + "8f", raw[76:108])
    vox_offset = struct.unpack(endian + "f", raw[108:112])[0]
    scl_slope, scl_inter = struct.unpack(endian + "2f", raw[112:120])

    ndim = dim[0]
    if not 2 <= ndim <= 7:
        raise GridError(f"invalid NIfTI dim[0]={ndim}")
    shape = list(dim[1:1 + ndim])
    while len(shape) > 3 and shape[-1] == 1:
        shape.pop()
    if len(shape) > 3 or any(n < 1 for n in shape):
        raise GridError(f"unsupported NIfTI dimensions {dim[1:1 + ndim]}")
    if datatype not in _NIFTI_DTYPES:
        raise GridError(f"unsupported NIfTI datatype code {datatype}")
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(endian)
    nx, ny = shape[0], shape[1]
    nz = shape[2] if len(shape) == 3 else 1

    offset = int(vox_offset)
    count = nx * ny * nz
    if offset < 348 or offset + count * dtype.itemsize > len(raw):
        raise GridError("NIfTI payload truncated or vox_offset invalid")
    # x varies fastest on disk
    vol = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(nz, ny, nx)
    if nz == 1:
        plane = vol[0]
    else:
        if slice_index is None:
            raise GridError(f"3D NIfTI volume with {nz} slices requires a slice index")
        if not 0 <= slice_index < nz:
            raise GridError(f"slice index {slice_index} outside 0..{nz - 1}")
        plane = vol[slice_index]
    plane = plane.astype(plane.dtype.newbyteorder("="))
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        if math.isfinite(scl_slope) and scl_slope != 0.0:
            plane = plane.astype(np.float64) * scl_slope + scl_inter
    sx, sy = abs(pixdim[1]), abs(pixdim[2])
    geometry = GridGeometry(nx, ny, sx if sx > 0 else 1.0, sy if sy > 0 else 1.0)
    if plane.dtype.kind == "f" and not np.all(np.isfinite(plane)):
        raise GridError("non-finite pixel value in NIfTI payload")
    return geometry, np.ascontiguousarray(plane)


def write_nifti(path, volume: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> None:
    """Minimal single-file NIfTI-1 writer (little-endian, no extensions).

    ``volume`` is indexed ``[z, y, x]`` (or ``[y, x]``). Intended for tests and
    demos; the reader is the supported surface.
    """
    vol = np.asarray(volume)
    if vol.ndim == 2:
        vol = vol[None]
    codes = {v: k for k, v in _NIFTI_DTYPES.items()}
    key = vol.dtype.newbyteorder("=").str[1:]
    if key not in codes:
        raise GridError(f"cannot write dtype {vol.dtype}")
    nz, ny, nx = vol.shape
    hdr = bytearray(352)
    struct.pack_into("<i", hdr, 0, 348)
    ndim = 3 if nz > 1 else 2
    struct.pack_into("<8h", hdr, 40, ndim, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, codes[key], vol.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *map(float, spacing), 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[344:348] = b"n+1\x00"
    data = bytes(hdr) + vol.astype(vol.dtype.newbyteorder("<")).tobytes()
    if str(path).endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    _atomic_write(path, data)
