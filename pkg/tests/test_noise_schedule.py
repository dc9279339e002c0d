"""
Tests for chunk noise levels and boundary shuffling.
"""

import math

import numpy as np
import pytest

from chunkvid.errors import ConfigError, RangeError
from chunkvid.noise_schedule import (
    DEFAULT_EPS_MAX,
    DEFAULT_EPS_MIN,
    SCHEDULE_KINDS,
    ScheduleParams,
    ShuffleConfig,
    base_noise,
    chunk_base_noises,
    chunk_noise,
    eps_max_for_snr,
    noise_level,
    schedule_levels,
    shuffle_boundary,
    start_time,
)
from chunkvid.random_source import RandomSource
from chunkvid.tensor import Tensor

from oracles import is_permutation_of


class TestNoiseLevel:
    """Test cases for per-chunk noise levels."""

    @pytest.mark.parametrize("kind", ["cosine", "linear"])
    def test_endpoints_exact(self, kind):
        """First chunk gets eps_min, last chunk eps_max, exactly."""
        for n in range(2, 20):
            p = ScheduleParams(kind=kind, eps_min=0.13, eps_max=0.91, n_chunks=n)
            assert noise_level(p, 0) == 0.13
            assert noise_level(p, n - 1) == 0.91

    def test_cosine_midpoint(self):
        """Odd n: the middle chunk sits halfway."""
        for n in (3, 5, 9, 15):
            p = ScheduleParams(kind="cosine", eps_min=0.1, eps_max=0.9, n_chunks=n)
            assert abs(noise_level(p, (n - 1) // 2) - 0.5) <= 1e-12

    def test_naive_constant(self):
        p = ScheduleParams(kind="naive", n_chunks=6)
        assert schedule_levels(p) == [p.eps_max] * 6

    def test_single_chunk(self):
        """n = 1 gives eps_min except for the naive schedule."""
        for kind in ("linear", "cosine", "sigmoid"):
            assert noise_level(ScheduleParams(kind=kind, n_chunks=1), 0) == DEFAULT_EPS_MIN
        assert noise_level(ScheduleParams(kind="naive", n_chunks=1), 0) == DEFAULT_EPS_MAX

    @pytest.mark.parametrize("kind", SCHEDULE_KINDS)
    def test_monotone_and_bounded(self, kind):
        for alpha in (0.5, 10.0, 40.0):
            p = ScheduleParams(kind=kind, eps_min=0.05, eps_max=0.95, n_chunks=12, alpha=alpha)
            levels = schedule_levels(p)
            assert levels == sorted(levels)
            assert all(0.05 <= x <= 0.95 for x in levels)

    def test_cosine_slow_start(self):
        """Cosine trails linear in the first half and leads in the second."""
        n = 11
        lin = ScheduleParams(kind="linear", eps_min=0.1, eps_max=0.9, n_chunks=n)
        cos = ScheduleParams(kind="cosine", eps_min=0.1, eps_max=0.9, n_chunks=n)
        for c in range(n):
            if c <= (n - 1) / 2:
                assert noise_level(lin, c) >= noise_level(cos, c) - 1e-15
            if c >= (n - 1) / 2:
                assert noise_level(lin, c) <= noise_level(cos, c) + 1e-15

    def test_sigmoid_formula(self):
        p = ScheduleParams(kind="sigmoid", eps_min=0.1, eps_max=0.9, n_chunks=5, alpha=10.0)
        expected = 0.1 + 0.8 / (1.0 + math.exp(-10.0 * (0.25 - 0.5)))
        assert noise_level(p, 1) == pytest.approx(expected, abs=1e-15)

    def test_out_of_range(self):
        p = ScheduleParams(n_chunks=4)
        with pytest.raises(RangeError):
            noise_level(p, 4)
        with pytest.raises(RangeError):
            noise_level(p, -1)

    def test_start_time(self):
        """The last chunk starts from pure noise."""
        p = ScheduleParams(n_chunks=8)
        assert start_time(p, 7) == 1.0
        assert start_time(p, 0) == pytest.approx(0.1)


class TestScheduleParams:
    """Test cases for schedule validation and defaults."""

    def test_terminal_snr_default(self):
        """Default eps_max has terminal SNR 0.003 on the linear path."""
        t = DEFAULT_EPS_MAX
        assert ((1 - t) / t) ** 2 == pytest.approx(0.003)
        assert eps_max_for_snr(0.003) == DEFAULT_EPS_MAX

    @pytest.mark.parametrize("kwargs", [
        {"kind": "exponential"}, {"eps_min": 0.0}, {"eps_min": 0.5, "eps_max": 0.4},
        {"n_chunks": 0}, {"alpha": 0.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ScheduleParams(**kwargs).validate()

    def test_shuffle_window(self):
        with pytest.raises(ConfigError):
            ShuffleConfig(s=9, frames_per_chunk=8).validate()
        with pytest.raises(ConfigError):
            ShuffleConfig(s=0).validate()


class TestBaseNoise:
    """Test cases for per-frame base noise."""

    def test_deterministic(self):
        a = base_noise(RandomSource(3), 2, 5, (4, 4))
        b = base_noise(RandomSource(3), 2, 5, (4, 4))
        assert np.array_equal(a.data, b.data)

    def test_frames_differ(self):
        rng = RandomSource(3)
        assert not np.array_equal(base_noise(rng, 2, 5, (8,)).data, base_noise(rng, 2, 6, (8,)).data)

    def test_standard_normal(self):
        draws = base_noise(RandomSource(11), 0, 0, (100_000,)).data
        assert abs(draws.mean()) <= 0.02
        assert abs(draws.std() - 1.0) <= 0.02


class TestShuffleBoundary:
    """Test cases for boundary noise shuffling."""

    def _frames(self, seed, count=8):
        return chunk_base_noises(RandomSource(seed), 0, count, (3,))

    def test_window_one_is_identity(self):
        a, b = self._frames(0), self._frames(1)
        new_a, new_b = shuffle_boundary(a, b, 1, RandomSource(0))
        assert all(x is y for x, y in zip(new_a, a))
        assert all(x is y for x, y in zip(new_b, b))

    def test_full_window(self):
        """s = T permutes each whole chunk."""
        a, b = self._frames(0), self._frames(1)
        new_a, new_b = shuffle_boundary(a, b, 8, RandomSource(4))
        assert is_permutation_of(new_a, a)
        assert is_permutation_of(new_b, b)

    def test_out_of_window_untouched(self):
        """s = 4, T = 8: chunk a frames 0..3 and chunk b frames 4..7 are unchanged."""
        a, b = self._frames(0), self._frames(1)
        new_a, new_b = shuffle_boundary(a, b, 4, RandomSource(9))
        assert all(new_a[i] is a[i] for i in range(4))
        assert all(new_b[i] is b[i] for i in range(4, 8))

    def test_random_trials(self):
        """1000 trials: windows keep their multiset, everything else stays put."""
        rng = np.random.default_rng(1)
        for trial in range(1000):
            frames = int(rng.integers(1, 10))
            s = int(rng.integers(1, frames + 1))
            a = [Tensor([float(i)]) for i in range(frames)]
            b = [Tensor([float(100 + i)]) for i in range(frames)]
            new_a, new_b = shuffle_boundary(a, b, s, RandomSource(trial))
            assert all(new_a[i] is a[i] for i in range(frames - s))
            assert all(new_b[i] is b[i] for i in range(s, frames))
            assert is_permutation_of(new_a[frames - s:], a[frames - s:])
            assert is_permutation_of(new_b[:s], b[:s])

    def test_window_too_large(self):
        a, b = self._frames(0, 3), self._frames(1, 3)
        with pytest.raises(RangeError):
            shuffle_boundary(a, b, 4, RandomSource(0))


class TestChunkNoise:
    """Test cases for shuffled chunk noise."""

    def test_shape(self):
        noise = chunk_noise(RandomSource(0), 2, 5, ShuffleConfig(s=4, frames_per_chunk=8), (64,))
        assert noise.shape == (8, 64)

    def test_independent_of_chunk_count_ahead(self):
        """A chunk's noise depends only on its neighbours, not on how long the video is."""
        cfg = ShuffleConfig(s=4, frames_per_chunk=8)
        a = chunk_noise(RandomSource(0), 2, 5, cfg, (6,))
        b = chunk_noise(RandomSource(0), 2, 9, cfg, (6,))
        assert np.array_equal(a.data, b.data)

    def test_rows_are_base_noises(self):
        """Every row is one of the chunk's own base noises, each used once."""
        cfg = ShuffleConfig(s=4, frames_per_chunk=8)
        rng = RandomSource(2)
        noise = chunk_noise(rng, 1, 3, cfg, (5,))
        base = [f.data for f in chunk_base_noises(rng, 1, 8, (5,))]
        matched = sorted(next(i for i, b in enumerate(base) if np.array_equal(row, b))
                         for row in noise.data)
        assert matched == list(range(8))

    def test_middle_frames_fixed(self):
        """With s = 2 and T = 8, frames 2..5 of a middle chunk keep their positions."""
        cfg = ShuffleConfig(s=2, frames_per_chunk=8)
        rng = RandomSource(2)
        noise = chunk_noise(rng, 1, 3, cfg, (5,))
        base = chunk_base_noises(rng, 1, 8, (5,))
        for t in range(2, 6):
            assert np.array_equal(noise.data[t], base[t].data)
