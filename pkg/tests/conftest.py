"""Shared helpers: finite-difference gradient checking and tiny datasets."""

from __future__ import annotations

import numpy as np
import pytest

from freqseg.autograd import Tensor


def numeric_grad(f, arrays: list[np.ndarray], h: float = 1e-5,
                 max_coords: int = 24, seed: int = 0) -> list[dict[tuple, float]]:
    """Central-difference df/dx for a sampled subset of coordinates.

    f maps the raw arrays to a python float. Returns, per array, a map from
    coordinate tuple to the numeric derivative there.
    """
    rng = np.random.default_rng(seed)
    out = []
    for which, base in enumerate(arrays):
        coords = {}
        flat_idx = np.arange(base.size)
        if base.size > max_coords:
            flat_idx = rng.choice(base.size, size=max_coords, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, base.shape)
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[which][idx] += h
            minus[which][idx] -= h
            coords[idx] = (f(*plus) - f(*minus)) / (2.0 * h)
        out.append(coords)
    return out


def check_grads(build, arrays: list[np.ndarray], rtol: float = 1e-4,
                h: float = 1e-5, max_coords: int = 24, seed: int = 0) -> float:
    """Compare backward() gradients of build(*tensors) against finite differences.

    build receives Tensors (requires_grad=True) and must return a scalar
    Tensor. Returns the worst relative error seen.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    loss.backward()

    def f(*raw):
        fresh = [Tensor(r) for r in raw]
        return build(*fresh).item()

    numeric = numeric_grad(f, [t.data for t in tensors], h=h,
                           max_coords=max_coords, seed=seed)
    worst = 0.0
    for t, coords in zip(tensors, numeric):
        assert t.grad is not None, "backward left a gradient unset"
        for idx, num in coords.items():
            ana = t.grad[idx]
            denom = max(abs(num), abs(ana), 1e-8)
            rel = abs(num - ana) / denom
            worst = max(worst, rel)
            assert rel < rtol, (
                f"gradient mismatch at {idx}: analytic {ana!r} vs numeric {num!r}"
            )
    return worst


@pytest.fixture(scope="session")
def phantom_dataset(tmp_path_factory):
    """Small on-disk phantom dataset shared by data/train/CLI tests."""
    from freqseg.data import PhantomSpec, generate_phantom_dataset

    directory = tmp_path_factory.mktemp("phantoms")
    spec = PhantomSpec(extents=(16, 16, 8), radius_range=(2.0, 3.0))
    ids = generate_phantom_dataset(directory, spec, count=10, master_seed=42)
    return directory, ids
