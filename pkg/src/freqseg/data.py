"""Volume/mask containers, SVOL file I/O, preprocessing, splits, phantoms.

SVOL is the toolkit's bit-exact binary container for 3D data:

    bytes 0-3   magic "SVOL"
    byte  4     version, 0x01
    byte  5     dtype: 0x01 = float32 little-endian (volumes),
                       0x02 = uint8 (label masks)
    bytes 6-7   reserved, written as zero
    bytes 8-31  three u64 little-endian extents (Nx, Ny, Nz)
    payload     row-major voxels, z fastest

Volumes are float32 on disk and float64 in memory. Voxel spacing is an
in-memory attribute (default 1.0 mm isotropic); it is not serialized.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frequency import band_index_map, fft3, ifft3

MAGIC = b"SVOL"
VERSION = 1
DTYPE_F32 = 0x01
DTYPE_U8 = 0x02
HEADER = struct.Struct("<4sBBH3Q")


class SvolError(ValueError):
    """Malformed SVOL file."""


class BadMagicError(SvolError):
    pass


class BadVersionError(SvolError):
    pass


class BadDtypeError(SvolError):
    pass


class TruncatedPayloadError(SvolError):
    pass


@dataclass
class Volume:
    """Dense 3D scalar field, float64 in memory."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"volume must be 3-d, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("volume contains non-finite values")

    @property
    def extents(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class Mask:
    """Dense 3D label field, uint8, 0 = background."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if self.data.ndim != 3:
            raise ValueError(f"mask must be 3-d, got shape {self.data.shape}")

    @property
    def extents(self) -> tuple[int, int, int]:
        return self.data.shape


def write_svol(path, obj: Volume | Mask) -> None:
    path = Path(path)
    if isinstance(obj, Volume):
        dtype_code, payload = DTYPE_F32, obj.data.astype("<f4").tobytes()
    elif isinstance(obj, Mask):
        dtype_code, payload = DTYPE_U8, obj.data.astype(np.uint8).tobytes()
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    header = HEADER.pack(MAGIC, VERSION, dtype_code, 0, *obj.extents)
    path.write_bytes(header + payload)


def read_svol(path) -> Volume | Mask:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than the 32-byte header")
    magic, version, dtype_code, _, nx, ny, nz = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    if dtype_code not in (DTYPE_F32, DTYPE_U8):
        raise BadDtypeError(f"{path}: unknown dtype code 0x{dtype_code:02x}")
    count = nx * ny * nz
    itemsize = 4 if dtype_code == DTYPE_F32 else 1
    expected = HEADER.size + count * itemsize
    if len(raw) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(raw) - HEADER.size} bytes, "
            f"header declares {count * itemsize}"
        )
    if dtype_code == DTYPE_F32:
        voxels = np.frombuffer(raw, dtype="<f4", offset=HEADER.size)
        return Volume(voxels.astype(np.float64).reshape(nx, ny, nz))
    voxels = np.frombuffer(raw, dtype=np.uint8, offset=HEADER.size)
    return Mask(voxels.reshape(nx, ny, nz).copy())


def read_volume(path) -> Volume:
    obj = read_svol(path)
    if not isinstance(obj, Volume):
        raise BadDtypeError(f"{path}: expected a float volume, found a label mask")
    return obj


def read_mask(path) -> Mask:
    obj = read_svol(path)
    if not isinstance(obj, Mask):
        raise BadDtypeError(f"{path}: expected a label mask, found a float volume")
    return obj


def minmax_normalize(v: Volume) -> Volume:
    """Rescale to [0,1]; a constant volume maps to all zeros."""
    lo = v.data.min()
    hi = v.data.max()
    if hi == lo:
        return Volume(np.zeros_like(v.data), v.spacing)
    return Volume((v.data - lo) / (hi - lo), v.spacing)


def _lerp_axis(data: np.ndarray, axis: int, target: int) -> np.ndarray:
    n = data.shape[axis]
    if n == target:
        return data
    pos = np.arange(target) * ((n - 1) / (target - 1))
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    moved = np.moveaxis(data, axis, 0)
    shape = (target,) + (1,) * (moved.ndim - 1)
    out = moved[lo] * (1.0 - frac.reshape(shape)) + moved[hi] * frac.reshape(shape)
    return np.moveaxis(out, 0, axis)


def _nearest_axis(data: np.ndarray, axis: int, target: int) -> np.ndarray:
    n = data.shape[axis]
    if n == target:
        return data
    pos = np.arange(target) * ((n - 1) / (target - 1))
    idx = np.floor(pos + 0.5).astype(np.intp)
    return np.take(data, idx, axis=axis)


def resize(obj: Volume | Mask, target_extents) -> Volume | Mask:
    """Resample to the target extents: trilinear for volumes, nearest for masks.

    Matching extents return the input unchanged (bitwise identity).
    """
    target = tuple(int(t) for t in target_extents)
    if len(target) != 3 or any(t < 2 for t in target):
        raise ValueError(f"target extents must be three values >= 2, got {target_extents}")
    if obj.extents == target:
        return obj
    if isinstance(obj, Volume):
        data = obj.data
        for axis in range(3):
            data = _lerp_axis(data, axis, target[axis])
        return Volume(data, obj.spacing)
    data = obj.data
    for axis in range(3):
        data = _nearest_axis(data, axis, target[axis])
    return Mask(data, obj.spacing)


@dataclass
class SplitSpec:
    """Participant-level partition of subject ids."""

    train: list[str]
    val: list[str]
    test: list[str]
    train_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        groups = [set(self.train), set(self.val), set(self.test)]
        names = ("train", "val", "test")
        for i in range(3):
            for j in range(i + 1, 3):
                overlap = groups[i] & groups[j]
                if overlap:
                    raise ValueError(
                        f"subject leakage between {names[i]} and {names[j]}: {sorted(overlap)}"
                    )


def make_split(subject_ids, counts: tuple[int, int, int], seed: int) -> SplitSpec:
    """Deterministic participant-level split into train/val/test counts."""
    ids = list(subject_ids)
    n_train, n_val, n_test = (int(c) for c in counts)
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"every partition needs at least one subject, got {counts}")
    if n_train + n_val + n_test > len(ids):
        raise ValueError(
            f"split needs {n_train + n_val + n_test} subjects, only {len(ids)} available"
        )
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return SplitSpec(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val : n_train + n_val + n_test],
        train_fraction=1.0,
        seed=seed,
    )


def subsample_train(split: SplitSpec, fraction: float, seed: int) -> SplitSpec:
    """Keep max(1, round(fraction*|train|)) train subjects; val/test unchanged."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"train fraction must lie in (0,1], got {fraction}")
    if fraction == 1.0:
        return SplitSpec(list(split.train), list(split.val), list(split.test),
                         train_fraction=1.0, seed=seed)
    keep = max(1, int(np.floor(fraction * len(split.train) + 0.5)))
    order = np.random.default_rng(seed).permutation(len(split.train))
    subset = [split.train[i] for i in order[:keep]]
    return SplitSpec(subset, list(split.val), list(split.test),
                     train_fraction=fraction, seed=seed)


@dataclass
class PhantomSpec:
    """Synthetic volume recipe: smooth random background plus sharp-edged
    ellipsoidal structures and additive Gaussian noise."""

    extents: tuple[int, int, int] = (32, 32, 16)
    background_cutoff: float = 0.15
    structure_count: int = 2
    radius_range: tuple[float, float] = (4.5, 7.0)
    edge_sharpness: float = 8.0
    noise_std: float = 0.01
    background_amplitude: float = 0.25
    structure_contrast: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.extents = tuple(int(e) for e in self.extents)
        if self.radius_range[0] < 1.0:
            raise ValueError("structure radius must be >= 1 voxel")
        if 2.0 * self.radius_range[1] >= min(self.extents):
            raise ValueError(
                f"structures of radius {self.radius_range[1]} cannot fit in {self.extents}"
            )


def _lowpass_field(rng: np.random.Generator, extents, cutoff: float) -> np.ndarray:
    white = rng.standard_normal(extents)
    spectrum = fft3(white)
    axes = [np.minimum(np.arange(n), n - np.arange(n)) / n for n in extents]
    r = np.sqrt(
        axes[0][:, None, None] ** 2 + axes[1][None, :, None] ** 2 + axes[2][None, None, :] ** 2
    )
    field = ifft3(np.where(r <= cutoff, spectrum, 0.0)).real
    scale = field.std()
    return field / scale if scale > 0 else field


def generate_phantom(spec: PhantomSpec, max_retries: int = 200) -> tuple[Volume, Mask]:
    """Seeded synthetic (volume, mask) pair; same spec gives identical bytes."""
    rng = np.random.default_rng(spec.seed)
    extents = spec.extents
    volume = spec.background_amplitude * _lowpass_field(rng, extents, spec.background_cutoff)
    mask = np.zeros(extents, dtype=np.uint8)
    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in extents), indexing="ij")

    placed = 0
    attempts = 0
    while placed < spec.structure_count:
        if attempts >= max_retries:
            raise RuntimeError(
                f"could not place structure {placed + 1}/{spec.structure_count} "
                f"after {max_retries} attempts"
            )
        attempts += 1
        radii = rng.uniform(spec.radius_range[0], spec.radius_range[1], size=3)
        center = np.array([rng.uniform(r + 1.0, n - r - 1.0) for r, n in zip(radii, extents)])
        # normalized ellipsoid distance, 1.0 at the surface
        d = np.sqrt(sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii)))
        inside = d <= 1.0
        if not inside.any() or (mask[inside] != 0).any():
            continue
        profile = np.clip((1.0 - d) * spec.edge_sharpness, 0.0, 1.0)
        volume += spec.structure_contrast * profile
        mask[inside] = 1
        placed += 1

    if spec.noise_std > 0:
        volume += spec.noise_std * rng.standard_normal(extents)
    return Volume(volume), Mask(mask)


def band_profile(v: Volume, n_bands: int) -> np.ndarray:
    """Fraction of non-DC spectral energy per band (diagnostic helper)."""
    power = np.abs(fft3(v.data)) ** 2
    bands = band_index_map(v.data.shape, n_bands)
    energy = np.bincount(bands.ravel(), weights=power.ravel(), minlength=n_bands)
    energy[0] -= power[0, 0, 0]
    total = energy.sum()
    return energy / total if total > 0 else energy


# -- dataset directory layout: subj_%04d.vol.svol / subj_%04d.mask.svol + manifest --


def subject_paths(directory, subject_id: str) -> tuple[Path, Path]:
    d = Path(directory)
    return d / f"{subject_id}.vol.svol", d / f"{subject_id}.mask.svol"


def write_manifest(directory, subject_ids) -> Path:
    path = Path(directory) / "manifest.txt"
    path.write_text("".join(f"{s}\n" for s in subject_ids))
    return path


def read_manifest(directory) -> list[str]:
    path = Path(directory) / "manifest.txt"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest.txt in {directory}")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def generate_phantom_dataset(directory, spec: PhantomSpec, count: int, master_seed: int,
                             ) -> list[str]:
    """Write `count` seeded phantom subjects plus a manifest; returns the ids."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(count):
        subject_seed = int(np.random.SeedSequence((master_seed, i)).generate_state(1)[0])
        spec_i = PhantomSpec(
            extents=spec.extents,
            background_cutoff=spec.background_cutoff,
            structure_count=spec.structure_count,
            radius_range=spec.radius_range,
            edge_sharpness=spec.edge_sharpness,
            noise_std=spec.noise_std,
            background_amplitude=spec.background_amplitude,
            structure_contrast=spec.structure_contrast,
            seed=subject_seed,
        )
        volume, mask = generate_phantom(spec_i)
        subject_id = f"subj_{i:04d}"
        vol_path, mask_path = subject_paths(directory, subject_id)
        write_svol(vol_path, volume)
        write_svol(mask_path, mask)
        ids.append(subject_id)
    write_manifest(directory, ids)
    return ids


def load_subject(directory, subject_id: str) -> tuple[Volume, Mask]:
    vol_path, mask_path = subject_paths(directory, subject_id)
    return read_volume(vol_path), read_mask(mask_path)
