import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from wavesep.data import synth_track
from wavesep.dsp import (ComplexSpectrogram, Waveform, WavError, hann_window, hz_to_mel, istft,
                         load_wav, mel_filterbank, mel_spectrogram, read_text_grid, save_wav, stft,
                         write_text_grid)


# --- waveform and WAV I/O -------------------------------------------------------

def test_waveform_validates_shape_and_values():
    with pytest.raises(ValueError):
        Waveform(np.zeros((3, 10)), 8000)
    with pytest.raises(ValueError):
        Waveform(np.array([[0.0, np.nan]]), 8000)
    with pytest.raises(ValueError):
        Waveform(np.zeros((1, 4)), 0)
    w = Waveform(np.zeros(5), 8000)
    assert w.samples.shape == (1, 5) and w.duration == pytest.approx(5 / 8000)


def test_alignment_requires_channels_length_and_rate():
    a = Waveform(np.zeros((2, 10)), 8000)
    assert a.aligned_with(Waveform(np.ones((2, 10)), 8000))
    assert not a.aligned_with(Waveform(np.zeros((2, 10)), 16000))
    assert not a.aligned_with(Waveform(np.zeros((1, 10)), 8000))


def test_pcm16_value_scaling(tmp_path):
    wavfile.write(tmp_path / "x.wav", 8000, np.array([16384], dtype=np.int16))
    w = load_wav(tmp_path / "x.wav")
    np.testing.assert_allclose(w.samples, [[0.5]], atol=1 / 32768)


def test_stereo_header_arithmetic(tmp_path):
    wavfile.write(tmp_path / "x.wav", 44100, np.zeros((44100, 2), dtype=np.int16))
    assert load_wav(tmp_path / "x.wav").samples.shape == (2, 44100)


def test_float32_round_trip_is_bit_identical(tmp_path, rng):
    w = Waveform(rng.standard_normal((2, 1000)).astype(np.float32), 8000)
    save_wav(w, tmp_path / "x.wav")
    back = load_wav(tmp_path / "x.wav")
    assert back.samples.dtype == np.float32
    assert back.samples.tobytes() == w.samples.tobytes() and back.sample_rate == 8000


def test_pcm16_round_trip_error_and_clamp(tmp_path, rng):
    x = rng.uniform(-1, 1, (1, 500))
    x[0, :3] = [1.5, -1.0, -3.0]
    save_wav(Waveform(x, 8000), tmp_path / "x.wav", "pcm16")
    back = load_wav(tmp_path / "x.wav").samples
    assert back[0, 0] == pytest.approx(1 - 1 / 32768)
    assert back[0, 1] == -1.0 and back[0, 2] == -1.0
    assert np.max(np.abs(back[0, 3:] - x[0, 3:])) <= 1 / 32768


def test_empty_waveform_round_trip(tmp_path):
    save_wav(Waveform(np.zeros((2, 0)), 8000), tmp_path / "e.wav")
    assert load_wav(tmp_path / "e.wav").samples.shape == (2, 0)


def test_load_errors(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(WavError):
        load_wav(tmp_path / "bad.wav")
    wavfile.write(tmp_path / "i32.wav", 8000, np.zeros(4, dtype=np.int32))
    with pytest.raises(WavError, match="encoding"):
        load_wav(tmp_path / "i32.wav")
    wavfile.write(tmp_path / "c3.wav", 8000, np.zeros((4, 3), dtype=np.int16))
    with pytest.raises(WavError, match="channels"):
        load_wav(tmp_path / "c3.wav")
    with pytest.raises(ValueError):
        save_wav(Waveform(np.zeros(3), 8000), tmp_path / "x.wav", "pcm24")


def test_unwritable_path_raises_os_error(tmp_path):
    with pytest.raises(OSError):
        save_wav(Waveform(np.zeros(3), 8000), tmp_path / "missing" / "x.wav")


# --- STFT ---------------------------------------------------------------------

def test_hann_window_is_periodic():
    w = hann_window(8)
    assert w[0] == 0 and w[4] == pytest.approx(1.0)
    np.testing.assert_allclose(w[1:], w[1:][::-1])


def test_stft_shape_and_zero_input():
    s = stft(np.zeros((2, 4000)), 1024, 256)
    assert s.real.shape == (2, 513, 1 + 4000 // 256)
    assert not s.magnitude.any()


def test_stft_rejects_bad_geometry():
    with pytest.raises(ValueError):
        stft(np.zeros((1, 100)), 64, 0)
    with pytest.raises(ValueError):
        stft(np.zeros((1, 100)), 0, 16)


def test_bin_centred_sinusoid_concentrates_energy():
    n, k, sr = 1024, 37, 8000
    t = np.arange(8000) / sr
    s = stft(np.sin(2 * np.pi * k * sr / n * t)[None], n, 256)
    power = s.magnitude[0] ** 2
    frame = power[:, power.shape[1] // 2]
    # a Hann window puts 1/4 of the bin-k amplitude into k-1 and k+1
    assert frame[k - 1:k + 2].sum() >= 0.95 * frame.sum()
    assert np.argmax(frame) == k


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16), length=st.integers(300, 3000))
def test_stft_is_linear(seed, length):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, length)), rng.standard_normal((2, length))
    sa, sb, sab = stft(a, 256, 64), stft(b, 256, 64), stft(a + b, 256, 64)
    np.testing.assert_allclose(sab.complex, sa.complex + sb.complex, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("n,hop", [(1024, 256), (512, 128), (4096, 1024)])
def test_istft_reconstructs_white_noise(rng, n, hop):
    x = rng.standard_normal((2, 12000))
    back = istft(stft(x, n, hop), target_length=x.shape[1]).samples
    assert back.shape == x.shape
    assert np.max(np.abs(back - x)) <= 1e-6


def test_istft_reconstructs_music_like_stem():
    track = synth_track(3, duration_s=1.0, sample_rate=8000)
    x = track.sources["other"][:, :6400].astype(np.float64)  # 0.8 s
    back = istft(stft(x, 1024, 256), target_length=x.shape[1]).samples
    assert np.max(np.abs(back - x)) <= 1e-6


def test_istft_zero_spectrogram_and_padding():
    z = ComplexSpectrogram(np.zeros((1, 129, 5)), np.zeros((1, 129, 5)), 256, 64)
    out = istft(z, target_length=1000)
    assert out.samples.shape == (1, 1000) and not out.samples.any()


def test_istft_rejects_inconsistent_bins():
    z = ComplexSpectrogram(np.zeros((1, 100, 5)), np.zeros((1, 100, 5)), 256, 64)
    with pytest.raises(ValueError, match="bins"):
        istft(z)


# --- mel ---------------------------------------------------------------------

def test_mel_zero_input_and_nonnegativity(rng):
    assert not mel_spectrogram(Waveform(np.zeros((1, 4000)), 8000), 32, 512, 128).any()
    m = mel_spectrogram(Waveform(rng.standard_normal((2, 4000)), 8000), 32, 512, 128)
    assert (m >= 0).all()


def test_mel_energy_monotonic_under_scaling(rng):
    x = rng.standard_normal((1, 4000))
    a = mel_spectrogram(Waveform(x, 8000), 32, 512, 128)
    b = mel_spectrogram(Waveform(2 * x, 8000), 32, 512, 128)
    assert (b >= a).all()


def test_sinusoid_lands_in_its_mel_band():
    sr, n, f0 = 8000, 1024, 1000.0
    t = np.arange(sr) / sr
    m = mel_spectrogram(Waveform(np.sin(2 * np.pi * f0 * t), sr), 40, n, 256)
    band = int(np.argmax(m[:, m.shape[1] // 2]))
    bank = mel_filterbank(40, n, sr)
    assert band == int(np.argmax(bank[:, int(round(f0 * n / sr))]))


def test_mel_filterbank_geometry():
    bank = mel_filterbank(20, 512, 8000)
    assert bank.shape == (20, 257) and bank.max() <= 1.0 and (bank >= 0).all()
    assert hz_to_mel(700.0) == pytest.approx(2595 * np.log10(2))
    with pytest.raises(ValueError):
        mel_filterbank(300, 512, 8000)


def test_text_grid_round_trip(tmp_path, rng):
    m = rng.standard_normal((4, 7))
    write_text_grid(m, tmp_path / "g.txt")
    np.testing.assert_array_equal(read_text_grid(tmp_path / "g.txt"), m)
