"""3D scalar volumes, minimal NIfTI-1 I/O, and voxel morphology.

Volumes are stored z-outermost: ``data`` has shape ``(nz, ny, nx)`` in C
order, so the flat buffer is x-fastest, which is also the on-disk payload
order of the NIfTI subset written here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

SUPPORTED_DTYPES = {
    np.dtype(np.uint8): 2,
    np.dtype(np.float32): 16,
    np.dtype(np.float64): 64,
}
_CODE_TO_DTYPE = {code: dt for dt, code in SUPPORTED_DTYPES.items()}

_HEADER_SIZE = 348
_VOX_OFFSET = 352
_MAGIC = b"n+1\x00"


class NiftiFormatError(ValueError):
    """Raised when a file violates the supported NIfTI-1 subset."""


class Connectivity(str, Enum):
    """Voxel neighborhood: 6 face neighbors or all 26 neighbors."""

    FACE6 = "face6"
    FULL26 = "full26"

    def structure(self) -> np.ndarray:
        rank = 1 if self is Connectivity.FACE6 else 3
        return ndimage.generate_binary_structure(3, rank)


@dataclass(frozen=True)
class StructuringElement:
    """Dilation element: one-step connectivity iterated ``radius`` times."""

    connectivity: Connectivity = Connectivity.FACE6
    radius: int = 1

    def __post_init__(self):
        object.__setattr__(self, "connectivity", Connectivity(self.connectivity))
        if self.radius < 1:
            raise ValueError(f"structuring element radius must be >= 1, got {self.radius}")


@dataclass(frozen=True)
class Volume3:
    """Dense 3D scalar grid with anisotropic voxel spacing.

    ``dims`` and ``spacing`` are ordered (z, y, x). Spacing is quantized to
    float32 on construction (the precision the file header stores), which
    makes save/load round-trips bit-exact.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {data.shape}")
        if data.dtype not in SUPPORTED_DTYPES:
            raise ValueError(
                f"unsupported dtype {data.dtype}; expected one of uint8, float32, float64"
            )
        if any(n < 1 for n in data.shape):
            raise ValueError(f"volume dims must be positive, got {data.shape}")
        spacing = tuple(float(np.float32(s)) for s in self.spacing)
        if len(spacing) != 3:
            raise ValueError("spacing must have three components (sz, sy, sx)")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise ValueError(f"spacing components must be positive and finite, got {spacing}")
        if data.dtype == np.uint8 and data.size and int(data.max()) > 1:
            raise ValueError("uint8 volumes are masks and must contain only 0 and 1")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def with_data(self, data: np.ndarray) -> "Volume3":
        """Same grid geometry, new voxel values."""
        return Volume3(data=data, spacing=self.spacing)

    def equals(self, other: "Volume3") -> bool:
        """Bitwise equality of dims, spacing, dtype, and data."""
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.data.dtype == other.data.dtype
            and self.data.tobytes() == other.data.tobytes()
        )


# A mask is a uint8 Volume3 restricted to {0, 1}.
Mask3 = Volume3


def require_mask(vol: Volume3, name: str = "mask") -> None:
    if vol.data.dtype != np.uint8:
        raise ValueError(f"{name} must be a uint8 mask volume, got dtype {vol.data.dtype}")


def zyx_to_linear(dims: tuple[int, int, int], z, y, x):
    return (z * dims[1] + y) * dims[2] + x


def linear_to_zyx(dims: tuple[int, int, int], idx):
    return np.unravel_index(idx, dims)


def load_volume(path: str | Path) -> Volume3:
    """Read a volume from the uncompressed single-file NIfTI-1 subset.

    Raises NiftiFormatError naming the offending header field on any
    violation of the subset contract.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_SIZE:
        raise NiftiFormatError(
            f"file too short for header: {len(raw)} bytes < {_HEADER_SIZE} (sizeof_hdr)"
        )
    header = raw[:_HEADER_SIZE]

    (sizeof_hdr,) = struct.unpack_from("<i", header, 0)
    if sizeof_hdr != _HEADER_SIZE:
        raise NiftiFormatError(f"sizeof_hdr is {sizeof_hdr}, expected {_HEADER_SIZE}")
    magic = header[344:348]
    if magic != _MAGIC:
        raise NiftiFormatError(f"magic is {magic!r}, expected {_MAGIC!r}")

    dim = struct.unpack_from("<8h", header, 40)
    if dim[0] != 3:
        raise NiftiFormatError(f"dim[0] is {dim[0]}, expected 3 (3-D volume)")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if min(nx, ny, nz) < 1:
        raise NiftiFormatError(f"dim[1..3] must be positive, got ({nx}, {ny}, {nz})")

    (datatype_code,) = struct.unpack_from("<h", header, 70)
    if datatype_code not in _CODE_TO_DTYPE:
        raise NiftiFormatError(
            f"datatype code {datatype_code} unsupported; expected one of "
            f"{sorted(_CODE_TO_DTYPE)}"
        )
    dtype = _CODE_TO_DTYPE[datatype_code]
    (bitpix,) = struct.unpack_from("<h", header, 72)
    if bitpix != dtype.itemsize * 8:
        raise NiftiFormatError(
            f"bitpix is {bitpix}, inconsistent with datatype {datatype_code} "
            f"({dtype.itemsize * 8} expected)"
        )

    pixdim = struct.unpack_from("<8f", header, 76)
    sx, sy, sz = pixdim[1], pixdim[2], pixdim[3]
    if not all(np.isfinite(s) and s > 0 for s in (sx, sy, sz)):
        raise NiftiFormatError(f"pixdim[1..3] must be positive, got ({sx}, {sy}, {sz})")

    (vox_offset,) = struct.unpack_from("<f", header, 108)
    if vox_offset != _VOX_OFFSET:
        raise NiftiFormatError(f"vox_offset is {vox_offset}, expected {_VOX_OFFSET}")

    n_voxels = nx * ny * nz
    n_bytes = n_voxels * dtype.itemsize
    payload = raw[_VOX_OFFSET : _VOX_OFFSET + n_bytes]
    if len(payload) < n_bytes:
        raise NiftiFormatError(
            f"truncated payload: expected {n_bytes} data bytes, found {len(payload)}"
        )

    flat = np.frombuffer(payload, dtype=dtype.newbyteorder("<"))
    data = flat.reshape(nz, ny, nx).astype(dtype, copy=True)
    return Volume3(data=data, spacing=(sz, sy, sx))


def save_volume(vol: Volume3, path: str | Path) -> None:
    """Write a volume in the minimal NIfTI-1 subset read by load_volume.

    Header pixdim is (x, y, z) order, the reverse of the in-memory
    (z, y, x) convention; the payload is the raw x-fastest array.
    """
    nz, ny, nx = vol.dims
    if max(nz, ny, nx) > 32767:
        raise ValueError(f"dims {vol.dims} exceed the int16 header limit 32767")
    dtype = vol.data.dtype
    datatype_code = SUPPORTED_DTYPES[dtype]
    sz, sy, sx = vol.spacing

    header = bytearray(_HEADER_SIZE)
    struct.pack_into("<i", header, 0, _HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, nx, ny, nz, 0, 0, 0, 0)
    struct.pack_into("<h", header, 70, datatype_code)
    struct.pack_into("<h", header, 72, dtype.itemsize * 8)
    struct.pack_into("<8f", header, 76, 0.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, float(_VOX_OFFSET))
    header[344:348] = _MAGIC

    payload = np.ascontiguousarray(vol.data).astype(dtype.newbyteorder("<"), copy=False)
    with open(path, "wb") as f:
        f.write(bytes(header))
        f.write(b"\x00" * (_VOX_OFFSET - _HEADER_SIZE))
        f.write(payload.tobytes())


def dilate(mask: Mask3, se: StructuringElement) -> Mask3:
    """Morphological dilation, ``se.radius`` iterations of one-step growth."""
    require_mask(mask)
    grown = ndimage.binary_dilation(
        mask.data.astype(bool), structure=se.connectivity.structure(), iterations=se.radius
    )
    return mask.with_data(grown.astype(np.uint8))


def connected_components(
    mask: Mask3, connectivity: Connectivity = Connectivity.FULL26
) -> tuple[Volume3, int]:
    """Label connected foreground components, background = 0.

    Labels 1..count are assigned in ascending order of each component's
    smallest linear index, so repeated runs are identical. Ids are stored
    as float64 so label maps stay within the supported I/O dtypes.
    """
    require_mask(mask)
    connectivity = Connectivity(connectivity)
    raw_labels, count = ndimage.label(mask.data, structure=connectivity.structure())
    labels = raw_labels.ravel()
    if count > 0:
        # np.unique on the C-order flat array gives each label's first
        # (= smallest) linear index; rank those to fix the label order.
        values, first_index = np.unique(labels, return_index=True)
        nonzero = values != 0
        order = np.argsort(first_index[nonzero], kind="stable")
        remap = np.zeros(count + 1, dtype=np.int64)
        remap[values[nonzero][order]] = np.arange(1, count + 1)
        labels = remap[labels]
    out = labels.reshape(mask.dims).astype(np.float64)
    return mask.with_data(out), int(count)


def surface_voxels(mask: Mask3) -> np.ndarray:
    """Foreground voxels with a face-6 neighbor that is background or
    outside the volume, as an (k, 3) array of (z, y, x) coordinates in
    ascending linear-index order."""
    require_mask(mask)
    m = mask.data.astype(bool)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    exposed = np.zeros_like(m)
    for axis in range(3):
        for step in (-1, 1):
            neighbor = np.roll(padded, step, axis=axis)[1:-1, 1:-1, 1:-1]
            exposed |= ~neighbor
    return np.argwhere(m & exposed)
