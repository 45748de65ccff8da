"""Domain types, validation helpers and the portable ``.dar`` array format."""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field

import numpy as np


class ValidationError(ValueError):
    """Input data violates a documented precondition."""


class ConfigurationError(ValueError):
    """A configuration cannot be realised (bad hyperparameters, infeasible budget)."""


class FormatError(ValueError):
    """A ``.dar`` file is malformed."""


class UnsupportedError(ValueError):
    """Array rank or dtype the file format cannot represent."""


class Domain(str, enum.Enum):
    IMAGE = "image"
    KSPACE = "kspace"


class Pattern(str, enum.Enum):
    CARTESIAN = "cartesian"
    RADIAL = "radial"
    SPIRAL = "spiral"


MIN_SIZE = 8


def check_finite(array, name="array"):
    array = np.asarray(array)
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{name} contains non-finite values")
    return array


def check_same_shape(*arrays, names=None):
    shapes = [np.shape(a) for a in arrays]
    if any(s != shapes[0] for s in shapes[1:]):
        label = ", ".join(names) if names else "inputs"
        raise ValidationError(f"shape mismatch between {label}: {shapes}")


def check_field_data(data, name="field"):
    """Coerce to a finite complex 2D array of at least ``MIN_SIZE`` per side."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValidationError(f"{name} must be 2D, got shape {data.shape}")
    if data.shape[0] < MIN_SIZE or data.shape[1] < MIN_SIZE:
        raise ValidationError(f"{name} must be at least {MIN_SIZE}x{MIN_SIZE}, got {data.shape}")
    if not np.iscomplexobj(data):
        data = data.astype(np.complex128 if data.dtype == np.float64 else np.complex64)
    return check_finite(data, name)


@dataclass(frozen=True)
class ComplexField:
    """A 2D complex image or k-space array.

    ``norm_scale`` records the factor the data was divided by, so
    ``data * norm_scale`` recovers physical units.
    """

    data: np.ndarray
    domain: Domain = Domain.IMAGE
    norm_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "data", check_field_data(self.data))
        object.__setattr__(self, "domain", Domain(self.domain))
        if not (np.isfinite(self.norm_scale) and self.norm_scale > 0):
            raise ValidationError(f"norm_scale must be positive, got {self.norm_scale}")

    @property
    def shape(self):
        return self.data.shape

    def magnitude(self):
        return np.abs(self.data)


def achieved_acceleration(mask) -> float:
    """Total grid points divided by sampled points."""
    mask = np.asarray(mask)
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise ValidationError("mask has no sampled entries")
    return mask.size / n


@dataclass(frozen=True)
class SamplingMask:
    mask: np.ndarray
    pattern: Pattern
    target_R: float
    seed: int = 0
    achieved_R: float = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise ValidationError(f"mask must be 2D, got shape {m.shape}")
        if not np.all((m == 0) | (m == 1)):
            raise ValidationError("mask entries must be 0 or 1")
        m = m.astype(np.float32)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        if not 1 <= self.target_R <= 16:
            raise ValidationError(f"target_R must lie in [1, 16], got {self.target_R}")
        object.__setattr__(self, "achieved_R", achieved_acceleration(m))

    @property
    def shape(self):
        return self.mask.shape

    def metadata(self) -> dict:
        return {
            "pattern": self.pattern.value,
            "target_R": float(self.target_R),
            "achieved_R": float(self.achieved_R),
            "seed": int(self.seed),
        }


@dataclass(frozen=True)
class Sample:
    """Prior image, fully sampled target (image and k-space), and a mask."""

    x_prior: ComplexField
    x_full: ComplexField
    k_full: ComplexField
    mask: SamplingMask | None = None
    sample_id: str = ""

    def __post_init__(self):
        check_same_shape(self.x_prior.data, self.x_full.data, self.k_full.data,
                         names=("x_prior", "x_full", "k_full"))
        if self.mask is not None:
            check_same_shape(self.x_full.data, self.mask.mask, names=("x_full", "mask"))

    @classmethod
    def from_images(cls, x_prior, x_full, mask=None, sample_id=""):
        from .transforms import fft2c

        x_prior = ComplexField(x_prior, Domain.IMAGE)
        x_full = ComplexField(x_full, Domain.IMAGE)
        return cls(x_prior, x_full, fft2c(x_full), mask, sample_id)

    @property
    def shape(self):
        return self.x_full.shape


def complex_to_channels(f) -> np.ndarray:
    """Stack real and imaginary parts as a ``(2, H, W)`` real array."""
    data = f.data if isinstance(f, ComplexField) else np.asarray(f)
    check_finite(data, "field")
    return np.stack([data.real, data.imag])


def channels_to_complex(channels, domain=Domain.IMAGE, norm_scale=1.0) -> ComplexField:
    channels = np.asarray(channels)
    if channels.ndim != 3 or channels.shape[0] != 2:
        raise ValidationError(f"expected shape (2, H, W), got {channels.shape}")
    data = channels[0] + 1j * channels[1]
    if channels.dtype == np.float32:
        data = data.astype(np.complex64)
    return ComplexField(data, domain, norm_scale)


# --- portable array files -------------------------------------------------

MAGIC = b"DARR"
_DTYPE_CODES = {
    np.dtype(np.float32): 1,
    np.dtype(np.float64): 2,
    np.dtype(np.complex64): 3,
    np.dtype(np.complex128): 4,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}
_HEADER = struct.Struct("<4sBB")


def encode_array(array) -> bytes:
    array = np.asarray(array)
    if array.ndim > 3:
        raise UnsupportedError(f"rank {array.ndim} arrays are not supported (max 3)")
    if array.dtype not in _DTYPE_CODES:
        raise UnsupportedError(f"unsupported dtype {array.dtype}")
    check_finite(array)
    header = _HEADER.pack(MAGIC, _DTYPE_CODES[array.dtype], array.ndim)
    dims = struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes()
    return header + dims + payload


def decode_array(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    magic, code, rank = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if rank > 3:
        raise UnsupportedError(f"rank {rank} arrays are not supported (max 3)")
    offset = _HEADER.size + 4 * rank
    if len(buf) < offset:
        raise FormatError("truncated dimension block")
    shape = struct.unpack_from(f"<{rank}I", buf, _HEADER.size)
    dtype = _CODE_DTYPES[code].newbyteorder("<")
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) - offset != expected:
        raise FormatError(f"payload has {len(buf) - offset} bytes, expected {expected}")
    out = np.frombuffer(buf, dtype=dtype, offset=offset).reshape(shape)
    return out.astype(dtype.newbyteorder("="))


def save_array(path, array) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(encode_array(array))


def load_array(path) -> np.ndarray:
    with open(os.fspath(path), "rb") as fh:
        return decode_array(fh.read())
