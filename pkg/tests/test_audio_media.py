import numpy as np
import pytest

from avdiff import audio as A
from avdiff.media import VideoTensor, export_png_sequence, read_tensor, read_video, write_tensor, write_video

CFG = A.DEFAULT_MEL
N_COLS = 128


def _tone(freqs, n_cols=N_COLS, amp=0.4):
    t = np.arange(CFG.n_samples(n_cols)) / CFG.sample_rate
    return sum(amp * np.sin(2 * np.pi * f * t) for f in freqs)


def _rel_l2(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_mel_config_lengths():
    assert CFG.n_samples(128) == 127 * 256
    assert CFG.n_frames_for(2.0) == 128
    assert CFG.n_frames_for(0.01) == 8


def test_analysis_shape_and_range():
    spec = A.analyze(_tone([440.0]))
    assert spec.shape == (1, 64, N_COLS)
    assert spec.data.min() >= -1 and spec.data.max() <= 1


def test_filterbank_unit_peaks_and_centres():
    fb = A.mel_filterbank()
    assert fb.shape == (64, 513)
    assert np.all(fb >= 0) and fb.max() <= 1.0
    assert np.all(np.diff(A.mel_centers()) > 0)
    assert A.mel_bin_for_frequency(440.0) < A.mel_bin_for_frequency(880.0)


def test_hz_mel_inverse():
    f = np.array([0.0, 100.0, 440.0, 8000.0])
    np.testing.assert_allclose(A.mel_to_hz(A.hz_to_mel(f)), f, rtol=1e-12, atol=1e-9)


def test_db_normalization_round_trip():
    amp = np.array([0.05, 1.0, 30.0, 200.0])
    np.testing.assert_allclose(A.denormalize_db(A.normalize_db(amp)), amp, rtol=1e-12)
    assert A.denormalize_db(np.array([-1.0]))[0] == 0.0


def test_pure_tone_round_trip():
    spec = A.analyze(_tone([440.0]))
    wav = A.spectrogram_to_waveform(spec)
    again = A.analyze(wav)
    assert _rel_l2(again.data, spec.data) < 0.1


def test_silence_round_trip():
    spec = A.analyze(np.zeros(CFG.n_samples(N_COLS)))
    assert np.all(spec.data == -1)
    wav = A.spectrogram_to_waveform(spec)
    assert np.all(wav == 0)


def test_octave_tones_keep_peak_bins():
    spec = A.analyze(_tone([440.0, 880.0]))
    again = A.analyze(A.spectrogram_to_waveform(spec))

    def top2(s):
        profile = s.data[0].mean(axis=1)
        return set(np.argsort(profile)[-2:].tolist())

    assert top2(again) == top2(spec) == {A.mel_bin_for_frequency(440.0), A.mel_bin_for_frequency(880.0)}


def test_inversion_deterministic():
    spec = A.analyze(_tone([300.0]))
    np.testing.assert_array_equal(A.spectrogram_to_waveform(spec, n_iter=4), A.spectrogram_to_waveform(spec, n_iter=4))


def test_inconsistent_metadata_rejected():
    spec = A.analyze(_tone([440.0]))
    with pytest.raises(ValueError, match="metadata"):
        A.spectrogram_to_waveform(A.AudioSpectrogram(spec.data, sample_rate=22050))
    with pytest.raises(ValueError, match="metadata"):
        A.spectrogram_to_waveform(A.AudioSpectrogram(spec.data, hop=128))


@pytest.mark.parametrize("shape", [(64, 128), (1, 60, 128), (1, 64, 100), (2, 64, 128)])
def test_spectrogram_shape_validation(shape):
    with pytest.raises(ValueError):
        A.AudioSpectrogram(np.zeros(shape))


def test_spectrogram_rejects_non_finite():
    x = np.zeros((1, 64, 8))
    x[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        A.AudioSpectrogram(x)


def test_wav_round_trip(tmp_path):
    wav = _tone([440.0], n_cols=16)
    A.write_wav(tmp_path / "a.wav", wav)
    back, rate = A.read_wav(tmp_path / "a.wav")
    assert rate == 16000
    np.testing.assert_allclose(back, wav, atol=1 / 32767 + 1e-12)


# ---------------------------------------------------------------- raw tensors and video


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.int16])
def test_tensor_file_round_trip(tmp_path, dtype):
    x = (np.arange(2 * 3 * 8 * 8) % 17).reshape(2, 3, 8, 8).astype(dtype)
    write_tensor(tmp_path / "x.avt", x)
    y = read_tensor(tmp_path / "x.avt")
    assert y.dtype == x.dtype
    np.testing.assert_array_equal(x, y)


def test_tensor_file_layout(tmp_path):
    x = np.ones((2, 3), dtype="<f4")
    write_tensor(tmp_path / "x.avt", x)
    blob = (tmp_path / "x.avt").read_bytes()
    assert blob[:4] == b"AVT1"
    assert blob[4:8] == (3).to_bytes(4, "little")
    assert blob[8:11] == b"<f4"
    assert blob[11:15] == (2).to_bytes(4, "little")
    assert blob[15:31] == (2).to_bytes(8, "little") + (3).to_bytes(8, "little")
    assert len(blob) == 31 + 6 * 4


def test_tensor_file_truncated(tmp_path):
    write_tensor(tmp_path / "x.avt", np.zeros((4, 4), dtype=np.float32))
    p = tmp_path / "x.avt"
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(ValueError, match="payload"):
        read_tensor(p)
    p.write_bytes(b"NOPE" + p.read_bytes()[4:])
    with pytest.raises(ValueError, match="magic"):
        read_tensor(p)


def test_video_io_and_png(tmp_path):
    rng = np.random.default_rng(0)
    v = VideoTensor(rng.uniform(-1, 1, (3, 3, 16, 16)))
    write_video(tmp_path / "v.avt", v)
    assert read_video(tmp_path / "v.avt") == v
    paths = export_png_sequence(v, tmp_path / "frames")
    assert len(paths) == 3 and all(p.is_file() for p in paths)


@pytest.mark.parametrize("shape", [(3, 16, 16), (2, 4, 16, 16), (2, 3, 12, 16)])
def test_video_shape_validation(shape):
    with pytest.raises(ValueError):
        VideoTensor(np.zeros(shape))


def test_video_range_validation():
    with pytest.raises(ValueError):
        VideoTensor(np.full((1, 3, 8, 8), 1.5))
