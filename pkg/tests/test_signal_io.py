import struct

import numpy as np
import pytest

from lgmsep import signal_io
from lgmsep.errors import FormatError, InvalidInputError
from lgmsep.signal_io import Waveform


def test_protocol_frame_sizes():
    assert signal_io.frames_from_ms(256, 128, 16000) == (4096, 2048)


@pytest.mark.parametrize("window,frame_len,hop", [("sqrt_hann", 256, 128), ("hann", 256, 64),
                                                  ("rect", 64, 64), ("sqrt_hann", 64, 16)])
def test_stft_roundtrip(window, frame_len, hop):
    rng = np.random.default_rng(0)
    w = Waveform(rng.standard_normal((2, 1000)), 16000)
    S = signal_io.stft(w, frame_len, hop, window)
    assert S.shape[0] == frame_len // 2 + 1 and S.shape[2] == 2
    back = signal_io.istft(S)
    np.testing.assert_allclose(back.samples, w.samples, atol=1e-12)


def test_stft_first_and_last_samples_covered():
    x = np.zeros(512)
    x[0] = x[-1] = 1.0
    S = signal_io.stft(Waveform(x, 8000), 128, 64)
    np.testing.assert_allclose(signal_io.istft(S).samples[0], x, atol=1e-12)


def test_stft_parseval_sqrt_hann():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(4096)
    S = signal_io.stft(Waveform(x, 16000), 256, 128)
    # sqrt-Hann at 50% overlap is a tight frame with bound 1
    assert signal_io.spectrogram_energy(S) == pytest.approx(np.sum(x * x), rel=1e-10)


def test_stft_rejects_short_signal_and_bad_hop():
    with pytest.raises(InvalidInputError):
        signal_io.stft(Waveform(np.zeros(100), 16000), 256, 128)
    with pytest.raises(InvalidInputError):
        signal_io.stft(Waveform(np.zeros(1000), 16000), 256, 100)
    with pytest.raises(InvalidInputError):
        signal_io.get_window("blackman", 16)


def test_istft_needs_metadata():
    with pytest.raises(InvalidInputError):
        signal_io.istft(signal_io.Spectrogram(np.zeros((129, 4, 1))))


@pytest.mark.parametrize("fmt,tol", [("float32", 1e-7), ("pcm16", 1.0 / 32768)])
def test_wav_roundtrip(tmp_path, fmt, tol):
    rng = np.random.default_rng(2)
    w = Waveform(rng.uniform(-0.9, 0.9, size=(3, 501)), 22050)
    path = tmp_path / "a.wav"
    signal_io.write_wav(path, w, fmt)
    r = signal_io.read_wav(path)
    assert r.sample_rate == 22050 and r.samples.shape == (3, 501)
    np.testing.assert_allclose(r.samples, w.samples, atol=tol)


def test_wav_errors_carry_offsets(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"RIFX" + b"\x00" * 20)
    with pytest.raises(FormatError, match="offset 0"):
        signal_io.read_wav(p)
    good = tmp_path / "good.wav"
    signal_io.write_wav(good, Waveform(np.zeros(10), 8000))
    data = good.read_bytes()
    p.write_bytes(data[:-6])
    with pytest.raises(FormatError, match="byte offset"):
        signal_io.read_wav(p)
    # 24-bit PCM is not supported
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 24000, 3, 24)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 3) + b"\x00" * 3
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body) + 1) + body + b"\x00")
    with pytest.raises(FormatError, match="unsupported"):
        signal_io.read_wav(p)
