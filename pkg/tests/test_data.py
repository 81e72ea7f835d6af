import numpy as np
import pytest

from spectra.data import (Recording, SAMPLE_RATE_HZ, channel_stats,
                          denormalize, load_recording_csv, load_split,
                          make_windows, normalize, resample_50hz,
                          save_recording_csv, synth_dataset)
from spectra.errors import DataError
from spectra.stft import StftPlan, stft_direct


class TestRecording:
    def test_validates_monotone_timestamps(self):
        with pytest.raises(DataError):
            Recording(np.array([0.0, 0.1, 0.1]), np.zeros((3, 2)))
        with pytest.raises(DataError):
            Recording(np.array([0.0, 0.2, 0.1]), np.zeros((3, 2)))

    def test_validates_label_length(self):
        with pytest.raises(DataError):
            Recording(np.array([0.0, 0.1]), np.zeros((2, 1)),
                      labels=np.array([0]))

    def test_n_channels(self):
        rec = Recording(np.array([0.0, 0.1]), np.zeros((2, 3)))
        assert rec.n_channels == 3


class TestResample:
    def test_identity_on_50hz_grid(self):
        t = np.arange(100) / SAMPLE_RATE_HZ
        samples = np.random.default_rng(0).normal(size=(100, 2))
        out = resample_50hz(Recording(t, samples))
        assert len(out.samples) == 100
        np.testing.assert_allclose(out.samples, samples, atol=1e-12)

    def test_linear_ramp_is_exact(self):
        # linear interpolation reproduces an affine signal exactly
        t = np.sort(np.random.default_rng(1).uniform(0.0, 2.0, 60))
        t[0], t[-1] = 0.0, 2.0
        samples = (3.0 * t - 1.0)[:, None]
        out = resample_50hz(Recording(t, samples))
        np.testing.assert_allclose(out.samples[:, 0],
                                   3.0 * out.timestamps - 1.0, atol=1e-9)

    def test_upsampling_sine_error_bound(self):
        # piecewise-linear error <= h^2 max|f''| / 8 with h = 1/25 s
        t = np.arange(51) / 25.0  # 25 Hz input
        samples = np.sin(2.0 * np.pi * t)[:, None]
        out = resample_50hz(Recording(t, samples))
        truth = np.sin(2.0 * np.pi * out.timestamps)
        bound = (1.0 / 25.0) ** 2 * (2.0 * np.pi) ** 2 / 8.0
        assert np.abs(out.samples[:, 0] - truth).max() <= bound + 1e-12

    def test_output_grid_is_uniform_50hz(self):
        t = np.sort(np.random.default_rng(2).uniform(0.0, 3.0, 40))
        t[0], t[-1] = 0.0, 3.0
        out = resample_50hz(Recording(t, np.zeros((40, 1))))
        np.testing.assert_allclose(np.diff(out.timestamps),
                                   1.0 / SAMPLE_RATE_HZ, atol=1e-12)
        assert len(out.timestamps) == 151

    def test_labels_from_nearest_sample(self):
        t = np.array([0.0, 0.05, 0.1])  # 20 Hz
        labels = np.array([0, 1, 2])
        out = resample_50hz(Recording(t, np.zeros((3, 1)), labels))
        # grid 0.00 0.02 0.04 0.06 0.08 0.10 -> nearest 0 0 1 1 2 2
        np.testing.assert_array_equal(out.labels, [0, 0, 1, 1, 2, 2])

    def test_too_short_raises(self):
        with pytest.raises(DataError):
            resample_50hz(Recording(np.array([0.0]), np.zeros((1, 1))))


class TestMakeWindows:
    def rec(self, n, c=2):
        return Recording(np.arange(n) / SAMPLE_RATE_HZ,
                         np.random.default_rng(0).normal(size=(n, c)),
                         labels=np.zeros(n, dtype=np.int64))

    def test_window_count_half_overlap(self):
        # 500 samples, T=100, hop 50 -> (500-100)//50 + 1 = 9
        batch = make_windows(self.rec(500), T=100, overlap=0.5)
        assert batch.windows.shape == (9, 100, 2)

    def test_exact_fit_single_window(self):
        batch = make_windows(self.rec(100), T=100, overlap=0.5)
        assert batch.windows.shape[0] == 1

    def test_partial_tail_dropped(self):
        batch = make_windows(self.rec(149), T=100, overlap=0.5)
        assert batch.windows.shape[0] == 1

    def test_window_content_matches_slices(self):
        rec = self.rec(250)
        batch = make_windows(rec, T=100, overlap=0.5)
        for i in range(batch.windows.shape[0]):
            np.testing.assert_array_equal(batch.windows[i],
                                          rec.samples[i * 50 : i * 50 + 100])

    def test_majority_vote_labels(self):
        labels = np.array([0] * 30 + [1] * 70)
        rec = Recording(np.arange(100) / SAMPLE_RATE_HZ,
                        np.zeros((100, 1)), labels)
        assert make_windows(rec, T=100).labels[0] == 1

    def test_majority_tie_breaks_low(self):
        labels = np.array([0] * 50 + [1] * 50)
        rec = Recording(np.arange(100) / SAMPLE_RATE_HZ,
                        np.zeros((100, 1)), labels)
        assert make_windows(rec, T=100).labels[0] == 0

    def test_unlabeled_recording_gets_minus_one(self):
        rec = Recording(np.arange(100) / SAMPLE_RATE_HZ, np.zeros((100, 1)))
        assert (make_windows(rec, T=100).labels == -1).all()

    def test_short_recording_raises(self):
        with pytest.raises(DataError):
            make_windows(self.rec(50), T=100)

    def test_full_overlap_raises(self):
        with pytest.raises(DataError):
            make_windows(self.rec(200), T=100, overlap=1.0)


class TestNormalize:
    def batch(self, seed=0):
        from spectra.data import WindowBatch
        rng = np.random.default_rng(seed)
        windows = rng.normal(loc=[2.0, -1.0, 0.5],
                             scale=[1.0, 3.0, 0.2], size=(8, 40, 3))
        return WindowBatch(windows, np.zeros(8, dtype=np.int64))

    def test_result_is_standardized(self):
        out = normalize(self.batch())
        mean, std = channel_stats(out.windows)
        np.testing.assert_allclose(mean, 0.0, atol=1e-10)
        np.testing.assert_allclose(std, 1.0, atol=1e-10)

    def test_round_trip_with_denormalize(self):
        batch = self.batch()
        out = normalize(batch)
        restored = denormalize(out.windows, out.norm_stats)
        np.testing.assert_allclose(restored, batch.windows, atol=1e-10)

    def test_external_stats_are_applied(self):
        batch = self.batch()
        stats = (np.array([1.0, 2.0, 3.0]), np.array([2.0, 4.0, 8.0]))
        out = normalize(batch, stats)
        np.testing.assert_allclose(out.windows,
                                   (batch.windows - stats[0]) / stats[1],
                                   atol=1e-12)

    def test_zero_variance_channel_flagged(self):
        from spectra.data import WindowBatch
        windows = np.random.default_rng(0).normal(size=(4, 10, 2))
        windows[..., 1] = 7.0
        out = normalize(WindowBatch(windows, np.zeros(4, dtype=np.int64)))
        np.testing.assert_array_equal(out.degenerate_channels, [1])
        assert np.isfinite(out.windows).all()
        np.testing.assert_allclose(out.windows[..., 1], 0.0, atol=1e-12)


class TestSynthDataset:
    def test_split_sizes_and_labels(self):
        train, test = synth_dataset(3, 10.0, seed=0)
        assert len(train.samples) == 3 * 400  # 80% of 10 s at 50 Hz
        assert len(test.samples) == 3 * 100
        assert set(np.unique(train.labels)) == {0, 1, 2}
        assert set(np.unique(test.labels)) == {0, 1, 2}
        assert train.n_channels == 6

    def test_deterministic_per_seed(self):
        a, _ = synth_dataset(2, 5.0, seed=4)
        b, _ = synth_dataset(2, 5.0, seed=4)
        np.testing.assert_array_equal(a.samples, b.samples)
        c, _ = synth_dataset(2, 5.0, seed=5)
        assert not np.array_equal(a.samples, c.samples)

    def test_channel_amplitude_profile(self):
        train, _ = synth_dataset(2, 40.0, seed=1, noise_std=0.0)
        seg = train.samples[train.labels == 0]
        amps = np.abs(seg).max(axis=0)
        np.testing.assert_allclose(amps, 1.0 / (1 + np.arange(6)), rtol=0.01)

    def test_noiseless_class0_periodicity(self):
        # class 0 fundamental is 1 Hz -> period = 50 samples; all channel
        # harmonics share it within one contiguous segment
        train, _ = synth_dataset(2, 30.0, seed=2, noise_std=0.0)
        seg = train.samples[train.labels == 0]
        np.testing.assert_allclose(seg[:-50], seg[50:], atol=1e-9)

    def test_class0_energy_in_low_bins(self):
        # fundamentals/harmonics of class 0 sit below 3.125 Hz resolution,
        # so bins 0-1 dominate the channel-0 spectrum
        train, _ = synth_dataset(2, 20.0, seed=3, noise_std=0.0)
        seg = train.samples[train.labels == 0][:96]
        plan = StftPlan(n_fft=16, hop=8, n_samples=96)
        mags = stft_direct(seg, plan)
        dominant = mags[:, :, 0].mean(axis=0).argmax()
        assert dominant in (0, 1)

    def test_distinct_class_fundamentals(self):
        # class 2 fundamental (2.6 Hz) lands in a higher bin than class 0
        train, _ = synth_dataset(3, 40.0, seed=6, noise_std=0.0)
        plan = StftPlan(n_fft=64, hop=32, n_samples=512)

        def dominant_bin(c):
            seg = train.samples[train.labels == c][:512]
            mags = stft_direct(seg, plan)
            return mags[:, 1:, 0].mean(axis=0).argmax() + 1  # skip DC

        assert dominant_bin(2) > dominant_bin(0)

    def test_too_few_classes_raises(self):
        with pytest.raises(DataError):
            synth_dataset(1, 10.0, seed=0)


class TestCsv:
    def test_round_trip_with_labels(self, tmp_path):
        train, _ = synth_dataset(2, 4.0, seed=0)
        path = str(tmp_path / "rec.csv")
        save_recording_csv(train, path)
        loaded = load_recording_csv(path)
        np.testing.assert_allclose(loaded.samples, train.samples, atol=1e-15)
        np.testing.assert_allclose(loaded.timestamps, train.timestamps,
                                   atol=1e-15)
        np.testing.assert_array_equal(loaded.labels, train.labels)

    def test_round_trip_without_labels(self, tmp_path):
        rec = Recording(np.arange(5) / 50.0,
                        np.random.default_rng(0).normal(size=(5, 2)))
        path = str(tmp_path / "rec.csv")
        save_recording_csv(rec, path)
        loaded = load_recording_csv(path)
        assert loaded.labels is None
        np.testing.assert_allclose(loaded.samples, rec.samples, atol=1e-15)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,c0,label\n0.0,1.0,0\n")
        with pytest.raises(DataError):
            load_recording_csv(str(path))

    def test_unsorted_rows_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,c0\n0.0,1.0\n0.2,1.0\n0.1,1.0\n")
        with pytest.raises(DataError):
            load_recording_csv(str(path))

    def test_malformed_value_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,c0\n0.0,abc\n")
        with pytest.raises(DataError):
            load_recording_csv(str(path))

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("")
        with pytest.raises(DataError):
            load_recording_csv(str(path))

    def test_load_split_reuses_train_stats(self, tmp_path):
        train, test = synth_dataset(2, 12.0, seed=0)
        save_recording_csv(train, str(tmp_path / "train.csv"))
        save_recording_csv(test, str(tmp_path / "test.csv"))
        train_b, test_b = load_split(str(tmp_path), T=100)
        assert train_b.norm_stats is not None
        np.testing.assert_array_equal(train_b.norm_stats[0],
                                      test_b.norm_stats[0])
        # train split is standardized; test reuses (not re-fits) the stats
        mean, std = channel_stats(train_b.windows)
        np.testing.assert_allclose(mean, 0.0, atol=0.2)
        np.testing.assert_allclose(std, 1.0, atol=0.2)
