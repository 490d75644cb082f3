"""WAV file I/O and STFT analysis/synthesis."""
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidInputError

WINDOWS = ("sqrt_hann", "hann", "rect")


@dataclass
class Waveform:
    """Multichannel signal, ``samples`` has shape (channels, length)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2:
            raise InvalidInputError(f"samples must be (channels, length), got {s.shape}")
        if self.sample_rate <= 0:
            raise InvalidInputError("sample_rate must be positive")
        self.samples = s

    @property
    def channels(self):
        return self.samples.shape[0]

    @property
    def length(self):
        return self.samples.shape[1]


@dataclass
class Spectrogram:
    """Complex STFT, ``values`` has shape (F, N, channels).

    ``length`` is the number of samples of the analysed signal and is
    what ``istft`` trims back to.
    """

    values: np.ndarray
    frame_len: int = None
    hop: int = None
    window: str = None
    length: int = None
    sample_rate: int = 16000
    extra: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values):
        return Spectrogram(values, self.frame_len, self.hop, self.window, self.length,
                           self.sample_rate)


def frames_from_ms(frame_ms, hop_ms, sample_rate):
    """Convert frame/hop durations in milliseconds to sample counts."""
    return int(round(frame_ms * sample_rate / 1000.0)), int(round(hop_ms * sample_rate / 1000.0))


def get_window(kind, frame_len):
    if kind == "rect":
        return np.ones(frame_len)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(frame_len) / frame_len)
    if kind == "hann":
        return hann
    if kind == "sqrt_hann":
        return np.sqrt(hann)
    raise InvalidInputError(f"unknown window {kind!r}; expected one of {WINDOWS}")


def _synthesis_norm(win, hop):
    frame_len = len(win)
    acc = np.zeros(hop)
    w2 = win * win
    for k in range(frame_len // hop):
        acc += w2[k * hop:(k + 1) * hop]
    return acc


def _check_cola(win, hop):
    frame_len = len(win)
    if hop <= 0 or frame_len % hop:
        raise InvalidInputError(f"hop {hop} must divide frame_len {frame_len}")
    acc = _synthesis_norm(win, hop)
    if acc.min() <= 0 or np.ptp(acc) > 1e-10 * acc.max():
        raise InvalidInputError("window/hop pair does not satisfy constant overlap-add")
    return acc[0]


def _pad_amounts(length, frame_len, hop):
    front = frame_len - hop
    total = front + length + front
    extra = (-(total - frame_len)) % hop
    return front, front + extra


def stft(w, frame_len=4096, hop=2048, window="sqrt_hann"):
    """Short-time Fourier transform of every channel.

    The signal is zero-padded by ``frame_len - hop`` samples at both ends
    (and further at the tail to complete the last frame), so every input
    sample is covered by a full overlap-add set.
    """
    if not isinstance(w, Waveform):
        w = Waveform(np.asarray(w), 16000)
    win = get_window(window, frame_len)
    _check_cola(win, hop)
    if w.length < frame_len:
        raise InvalidInputError(f"signal of {w.length} samples is shorter than one frame ({frame_len})")
    front, back = _pad_amounts(w.length, frame_len, hop)
    x = np.pad(w.samples, ((0, 0), (front, back)))
    n_frames = (x.shape[1] - frame_len) // hop + 1
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[:, idx] * win  # (C, N, L)
    spec = np.fft.rfft(frames, axis=-1)  # (C, N, F)
    return Spectrogram(np.ascontiguousarray(spec.transpose(2, 1, 0)), frame_len, hop, window,
                       w.length, w.sample_rate)


def istft(S):
    """Weighted overlap-add inverse of :func:`stft`."""
    if not isinstance(S, Spectrogram) or None in (S.frame_len, S.hop, S.window, S.length):
        raise InvalidInputError("spectrogram lacks analysis metadata (frame_len/hop/window/length)")
    win = get_window(S.window, S.frame_len)
    norm = _check_cola(win, S.hop)
    F, N, C = S.values.shape
    if F != S.frame_len // 2 + 1:
        raise InvalidInputError(f"{F} bins inconsistent with frame_len {S.frame_len}")
    frames = np.fft.irfft(S.values.transpose(2, 1, 0), n=S.frame_len, axis=-1) * win
    out = np.zeros((C, (N - 1) * S.hop + S.frame_len))
    for n in range(N):
        out[:, n * S.hop:n * S.hop + S.frame_len] += frames[:, n]
    out /= norm
    front = S.frame_len - S.hop
    return Waveform(out[:, front:front + S.length], S.sample_rate)


def spectrogram_energy(S):
    """Signal-domain energy represented by a one-sided spectrogram (Parseval)."""
    weights = np.full(S.values.shape[0], 2.0)
    weights[0] = 1.0
    if S.frame_len % 2 == 0:
        weights[-1] = 1.0
    return float(np.sum(weights[:, None, None] * np.abs(S.values) ** 2) / S.frame_len)


# --------------------------------------------------------------------------- WAV

_PCM = 1
_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def read_wav(path):
    """Read a 16-bit PCM or 32-bit float RIFF/WAVE file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise FormatError("file too short for a RIFF header", offset=len(data))
    if data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE file", offset=0)
    pos = 12
    fmt = None
    payload = None
    while pos < len(data):
        if pos + 8 > len(data):
            raise FormatError("truncated chunk header", offset=pos)
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = pos + 8
        if body + size > len(data):
            raise FormatError(f"chunk {cid!r} declares {size} bytes but file ends", offset=len(data))
        if cid == b"fmt ":
            if size < 16:
                raise FormatError("fmt chunk too small", offset=body)
            tag, channels, rate, _, align, bits = struct.unpack_from("<HHIIHH", data, body)
            if tag == _EXTENSIBLE and size >= 40:
                tag = struct.unpack_from("<H", data, body + 24)[0]
            fmt = (tag, channels, rate, align, bits)
        elif cid == b"data":
            payload = (body, size)
        pos = body + size + (size & 1)
    if fmt is None:
        raise FormatError("missing fmt chunk", offset=12)
    if payload is None:
        raise FormatError("missing data chunk", offset=len(data))
    tag, channels, rate, align, bits = fmt
    if channels < 1:
        raise FormatError("zero channels in fmt chunk", offset=12)
    body, size = payload
    raw = data[body:body + size]
    if tag == _PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise FormatError(f"unsupported sample format (tag={tag}, bits={bits})", offset=12)
    frame_bytes = dtype.itemsize * channels
    if len(raw) % frame_bytes:
        raise FormatError("data chunk is not a whole number of frames", offset=body + len(raw))
    samples = np.frombuffer(raw, dtype=dtype).reshape(-1, channels).T.astype(np.float64) * scale
    return Waveform(samples, rate)


def write_wav(path, w, fmt="float32"):
    """Write ``w`` as ``"float32"`` (IEEE float) or ``"pcm16"``."""
    s = w.samples.T
    if fmt == "float32":
        tag, bits = _FLOAT, 32
        raw = np.ascontiguousarray(s, dtype="<f4").tobytes()
    elif fmt == "pcm16":
        tag, bits = _PCM, 16
        q = np.clip(np.round(s * 32768.0), -32768, 32767)
        raw = np.ascontiguousarray(q, dtype="<i2").tobytes()
    else:
        raise InvalidInputError(f"unknown WAV sample format {fmt!r}")
    channels = w.channels
    align = channels * bits // 8
    fmt_chunk = struct.pack("<HHIIHH", tag, channels, int(w.sample_rate),
                            int(w.sample_rate) * align, align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
    body += b"data" + struct.pack("<I", len(raw)) + raw
    if len(raw) & 1:
        body += b"\x00"
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)
