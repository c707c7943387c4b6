"""Spectral transform and frequency-splitting tests.

The transform oracle is a literal triple-sum DFT, written independently of
the fast implementation, so agreement pins down convention (sign, axis
order, normalization) as well as values.
"""

import numpy as np
import pytest

from freqseg.frequency import (
    band_energy,
    band_index_map,
    disentangle,
    fft3,
    high_block_mask,
    ifft3,
    mask_bounds,
)


def dft3_naive(a: np.ndarray) -> np.ndarray:
    """O(N^2)-per-axis DFT: X[k] = sum_n x[n] exp(-2 pi i k n / N)."""
    out = a.astype(np.complex128)
    for axis, n in enumerate(a.shape):
        k = np.arange(n)
        w = np.exp(-2j * np.pi * np.outer(k, k) / n)
        out = np.moveaxis(np.tensordot(w, np.moveaxis(out, axis, 0), axes=(1, 0)), 0, axis)
    return out


class TestTransform:
    @pytest.mark.parametrize("shape", [(8, 8, 8), (16, 4, 8), (12, 10, 6), (7, 5, 3), (9, 16, 5)])
    def test_matches_naive_dft(self, shape):
        rng = np.random.default_rng(hash(shape) % 2**32)
        a = rng.standard_normal(shape)
        got = fft3(a)
        want = dft3_naive(a)
        scale = np.abs(want).max()
        assert np.abs(got - want).max() / scale < 1e-10

    def test_dc_term_is_sum(self):
        a = np.random.default_rng(0).standard_normal((8, 4, 6))
        assert fft3(a)[0, 0, 0] == pytest.approx(a.sum(), rel=1e-12)

    @pytest.mark.parametrize("shape", [(8, 8, 8), (12, 10, 6), (7, 9, 5)])
    def test_round_trip(self, shape):
        a = np.random.default_rng(1).standard_normal(shape)
        back = ifft3(fft3(a))
        assert np.abs(back.imag).max() < 1e-12
        assert np.abs(back.real - a).max() < 1e-12

    def test_parseval(self):
        a = np.random.default_rng(2).standard_normal((16, 8, 4))
        lhs = (np.abs(fft3(a)) ** 2).sum()
        rhs = a.size * (a**2).sum()
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal((2, 8, 6, 4))
        lhs = fft3(2.5 * a - 1.5 * b)
        rhs = 2.5 * fft3(a) - 1.5 * fft3(b)
        assert np.abs(lhs - rhs).max() < 1e-10

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            fft3(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            fft3(np.zeros((0, 4, 4)))


class TestMaskBounds:
    def test_pinned_values(self):
        assert mask_bounds(160, 0.5) == (40, 120)
        assert mask_bounds(160, 0.25) == (60, 100)
        assert mask_bounds(7, 0.5) == (1, 5)

    def test_block_width_tracks_theta(self):
        lo, hi = mask_bounds(64, 0.5)
        assert hi - lo == 32
        lo, hi = mask_bounds(64, 0.25)
        assert hi - lo == 16

    def test_nesting_in_theta(self):
        # larger theta keeps a superset of frequencies in the high block
        for extent in (8, 16, 31, 100):
            prev = None
            for theta in (0.2, 0.4, 0.6, 0.8):
                lo, hi = mask_bounds(extent, theta)
                assert 0 <= lo < hi <= extent
                if prev is not None:
                    assert lo <= prev[0] and hi >= prev[1]
                prev = (lo, hi)

    def test_theta_validation(self):
        for bad in (0.0, 1.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                mask_bounds(16, bad)

    def test_mask_matches_bounds(self):
        shape = (16, 12, 8)
        m = high_block_mask(shape, 0.5)
        (lx, hx), (ly, hy) = mask_bounds(16, 0.5), mask_bounds(12, 0.5)
        want = np.zeros(shape, dtype=bool)
        want[lx:hx, ly:hy, :] = True
        assert np.array_equal(m, want)


class TestDisentangle:
    @pytest.mark.parametrize("theta", [0.25, 0.5, 0.75])
    def test_exact_reconstruction(self, theta):
        rng = np.random.default_rng(4)
        for shape in [(16, 16, 8), (12, 10, 6)]:
            v = rng.standard_normal(shape)
            pair = disentangle(v, theta)
            assert np.abs(pair.high + pair.low - v).max() < 1e-12

    def test_matches_explicit_mask_oracle(self):
        rng = np.random.default_rng(5)
        v = rng.standard_normal((16, 12, 8))
        theta = 0.5
        pair = disentangle(v, theta)
        spectrum = np.fft.fftn(v)
        mask = high_block_mask(v.shape, theta)
        high_ref = np.fft.ifftn(np.where(mask, spectrum, 0.0))
        low_ref = np.fft.ifftn(np.where(mask, 0.0, spectrum))
        assert np.abs(pair.high - high_ref.real).max() < 1e-10
        assert np.abs(pair.low - low_ref.real).max() < 1e-10
        # the residue diagnostic reports the discarded imaginary magnitude
        expected_residue = max(np.abs(high_ref.imag).max(), np.abs(low_ref.imag).max())
        assert pair.max_imag_residue == pytest.approx(expected_residue, rel=1e-9)

    def test_cosine_inside_block_lands_in_high(self):
        # the block is a product region: both the x and y index must fall
        # inside [8, 24) at theta=0.5, so modulate both axes with k=10
        # (mirror 22, also inside)
        n = 32
        x = np.arange(n)
        wave = np.cos(2 * np.pi * 10 * x / n)
        v = (wave[:, None] * wave[None, :])[:, :, None] * np.ones((1, 1, 8))
        pair = disentangle(v, 0.5)
        assert np.abs(pair.low).max() < 1e-10
        assert np.abs(pair.high - v).max() < 1e-10

    def test_single_axis_wave_lands_in_low(self):
        n = 32
        x = np.arange(n)
        # k=10 is inside [8, 24) along x, but the y index is pinned at 0,
        # which is outside — missing either axis excludes the bin
        wave = np.cos(2 * np.pi * 10 * x / n)
        v = np.broadcast_to(wave[:, None, None], (n, n, 8)).copy()
        pair = disentangle(v, 0.5)
        assert np.abs(pair.high).max() < 1e-10
        assert np.abs(pair.low - v).max() < 1e-10

    def test_cosine_outside_block_lands_in_low(self):
        n = 32
        x = np.arange(n)
        # k=4 and mirror 28 both sit outside [8, 24) on both axes
        wave = np.cos(2 * np.pi * 4 * x / n)
        v = (wave[:, None] * wave[None, :])[:, :, None] * np.ones((1, 1, 8))
        pair = disentangle(v, 0.5)
        assert np.abs(pair.high).max() < 1e-10
        assert np.abs(pair.low - v).max() < 1e-10

    def test_z_axis_passes_all_frequencies(self):
        # a wave varying only along z has x-y index (0,0), outside the block
        n = 16
        z = np.arange(8)
        wave = np.cos(2 * np.pi * 3 * z / 8)
        v = np.broadcast_to(wave[None, None, :], (n, n, 8)).copy()
        pair = disentangle(v, 0.5)
        assert np.abs(pair.high).max() < 1e-10
        # modulate x and y inside the block: the same z wave rides in high,
        # showing the mask never constrains the z index
        x = np.arange(n)
        carrier = np.cos(2 * np.pi * 6 * x / n)  # k=6, mirror 10, both in [4, 12)
        v2 = (carrier[:, None] * carrier[None, :])[:, :, None] * wave[None, None, :]
        pair2 = disentangle(v2, 0.5)
        assert np.abs(pair2.low).max() < 1e-10
        assert np.abs(pair2.high - v2).max() < 1e-10

    def test_volume_wrapper_accepted(self):
        from freqseg.data import Volume

        v = Volume(np.random.default_rng(6).standard_normal((8, 8, 8)))
        pair = disentangle(v, 0.5)
        assert np.abs(pair.high + pair.low - v.data).max() < 1e-12


class TestBands:
    def test_band_map_range_and_anchors(self):
        shape = (16, 16, 8)
        bands = band_index_map(shape, 6)
        assert bands.shape == shape
        assert bands.min() == 0 and bands.max() == 5
        assert bands[0, 0, 0] == 0  # DC
        assert bands[8, 8, 4] == 5  # Nyquist corner

    def test_band_map_symmetry(self):
        bands = band_index_map((12, 10, 8), 5)
        flipped = bands[
            np.ix_(
                (12 - np.arange(12)) % 12,
                (10 - np.arange(10)) % 10,
                (8 - np.arange(8)) % 8,
            )
        ]
        assert np.array_equal(bands, flipped)

    def test_band_energy_totals_parseval(self):
        a = np.random.default_rng(7).standard_normal((8, 8, 8))
        energy = band_energy(a, 4)
        assert energy.sum() == pytest.approx((np.abs(fft3(a)) ** 2).sum(), rel=1e-12)

    def test_pure_tone_hits_one_band(self):
        n = 16
        x = np.arange(n)
        v = np.broadcast_to(np.cos(2 * np.pi * 7 * x / n)[:, None, None], (n, n, n)).copy()
        energy = band_energy(v, 4)
        # radius 7/16 over the sqrt(3)/2 corner maximum: floor(0.505 * 4) = band 2
        assert energy[2] / energy.sum() > 0.999

    def test_needs_two_bands(self):
        with pytest.raises(ValueError):
            band_index_map((8, 8, 8), 1)
