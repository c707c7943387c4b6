"""3D discrete Fourier transform and spectral high/low disentanglement.

The forward transform is unnormalized (DC bin = sum of voxels), the inverse
carries the full 1/(Nx*Ny*Nz) factor. Power-of-two extents take an iterative
radix-2 path; any other extent falls back to a direct DFT along that axis.
Spectra are plain complex128 ndarrays in unshifted layout (DC at index
(0,0,0)).

The high/low split retains a central x-y index block of the unshifted
spectrum, where the highest frequencies live, over all z. The retained block
is generally not symmetric under frequency negation, so the masked spectra
are not Hermitian and their inverse transforms carry a structural imaginary
component; ``disentangle`` returns real parts and reports the measured
residue on the pair. The real parts still reconstruct the input exactly,
because the imaginary components of the two parts cancel by linearity.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass
class FreqPair:
    """Image-space high/low parts of a volume for a given split parameter."""

    high: np.ndarray
    low: np.ndarray
    theta: float
    max_imag_residue: float = 0.0


@lru_cache(maxsize=None)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


@lru_cache(maxsize=None)
def _twiddles(size: int, sign: int) -> np.ndarray:
    half = size // 2
    return np.exp(sign * 2j * np.pi * np.arange(half) / size)


def _fft_pow2(a: np.ndarray, sign: int) -> np.ndarray:
    """Iterative radix-2 transform of the last axis (length a power of two)."""
    n = a.shape[-1]
    a = a[..., _bit_reversal(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = _twiddles(size, sign)
        blocks = a.reshape(a.shape[:-1] + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(a.shape)
        size *= 2
    return a


@lru_cache(maxsize=None)
def _dft_matrix(n: int, sign: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


def _transform_axis(a: np.ndarray, axis: int, sign: int) -> np.ndarray:
    a = np.moveaxis(a, axis, -1)
    n = a.shape[-1]
    if n & (n - 1) == 0:
        a = _fft_pow2(np.ascontiguousarray(a), sign)
    else:
        a = a @ _dft_matrix(n, sign)
    return np.moveaxis(a, -1, axis)


def _volume_data(v) -> np.ndarray:
    data = np.asarray(getattr(v, "data", v))
    if data.ndim != 3:
        raise ValueError(f"expected a 3-d volume, got shape {data.shape}")
    if data.size == 0:
        raise ValueError("cannot transform an empty volume")
    return data


def fft3(v) -> np.ndarray:
    """Forward unnormalized 3D DFT of a volume; returns a complex spectrum."""
    a = _volume_data(v).astype(np.complex128)
    for axis in range(3):
        a = _transform_axis(a, axis, -1)
    return a


def ifft3(s: np.ndarray) -> np.ndarray:
    """Inverse 3D DFT with 1/N normalization; returns a complex array."""
    a = np.asarray(s, dtype=np.complex128)
    if a.ndim != 3:
        raise ValueError(f"expected a 3-d spectrum, got shape {a.shape}")
    if a.size == 0:
        raise ValueError("cannot transform an empty spectrum")
    for axis in range(3):
        a = _transform_axis(a, axis, 1)
    return a / a.size


def mask_bounds(extent: int, theta: float) -> tuple[int, int]:
    """Index range [start, end) of the retained central block along one axis.

    start = floor(extent*(1-theta)/2), end = start + round(extent*theta),
    with round meaning floor(x+0.5).
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0,1), got {theta}")
    if extent < 2:
        raise ValueError(f"extent must be >= 2, got {extent}")
    start = int(np.floor(extent * (1.0 - theta) / 2.0))
    length = int(np.floor(extent * theta + 0.5))
    return start, start + length


def high_block_mask(shape: tuple[int, int, int], theta: float) -> np.ndarray:
    """Boolean spectrum mask of the high-frequency block (x-y block, all z)."""
    mask = np.zeros(shape, dtype=bool)
    x0, x1 = mask_bounds(shape[0], theta)
    y0, y1 = mask_bounds(shape[1], theta)
    mask[x0:x1, y0:y1, :] = True
    return mask


def disentangle(v, theta: float) -> FreqPair:
    """Split a volume into complementary high/low frequency parts.

    The high spectrum keeps the central x-y block of the unshifted DFT (full
    size, zeros elsewhere); the low spectrum is the difference. Both are
    inverse-transformed; real parts are returned and the largest imaginary
    magnitude encountered is recorded as ``max_imag_residue``.
    """
    data = _volume_data(v)
    spectrum = fft3(data)
    mask = high_block_mask(data.shape, theta)
    high_spec = np.where(mask, spectrum, 0.0)
    low_spec = spectrum - high_spec
    high = ifft3(high_spec)
    low = ifft3(low_spec)
    residue = max(np.abs(high.imag).max(), np.abs(low.imag).max())
    return FreqPair(high=high.real, low=low.real, theta=theta,
                    max_imag_residue=float(residue))


def band_index_map(shape: tuple[int, int, int], n_bands: int) -> np.ndarray:
    """Band index per spectrum bin: concentric shells of normalized radial
    frequency, DC in band 0, the largest radius in band n_bands-1."""
    if n_bands < 2:
        raise ValueError(f"n_bands must be >= 2, got {n_bands}")
    axes = [np.minimum(np.arange(n), n - np.arange(n)) / n for n in shape]
    r = np.sqrt(
        axes[0][:, None, None] ** 2 + axes[1][None, :, None] ** 2 + axes[2][None, None, :] ** 2
    )
    r_max = r.max()
    bands = np.minimum((r / r_max * n_bands).astype(np.intp), n_bands - 1)
    return bands


def band_energy(v, n_bands: int) -> np.ndarray:
    """Spectral energy |F|^2 per radial band; the bands partition the total."""
    data = _volume_data(v)
    power = np.abs(fft3(data)) ** 2
    bands = band_index_map(data.shape, n_bands)
    return np.bincount(bands.ravel(), weights=power.ravel(), minlength=n_bands)
