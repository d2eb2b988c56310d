"""Deterministic signal chain.

STFT analysis/synthesis, Griffin-Lim phase retrieval, mel and linear-cepstral
features, magnitude normalization, time-downsampling, polyphase resampling and
PCM16 WAV I/O.  Everything here is a pure function over immutable inputs.

Conventions:
  * STFT frames are centered: the signal is reflect-padded by win//2 on both
    sides, frame t starts at sample t*hop of the padded signal.
  * istft returns the raw overlap-add of length (T-1)*hop + win; sample n
    corresponds to original-signal sample n - win//2.
  * Magnitudes are compressed to [0, 1] with a -100 dB floor relative to a
    corpus-level reference, and sharpened by gamma on inversion before
    Griffin-Lim.
"""

from __future__ import annotations

import struct
import wave as wave_mod
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft
import scipy.signal

from .errors import FormatError

LOG_FLOOR = 1e-5  # magnitude ratio floor inside log10: exactly -100 dB


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray  # float array, nominally in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")


@dataclass(frozen=True)
class LinearSpectrogram:
    values: np.ndarray  # (F, T) normalized magnitudes in [0, 1]
    hop: int
    win: int
    sample_rate: int

    def __post_init__(self):
        if self.values.shape[0] != self.win // 2 + 1:
            raise ValueError(
                f"F={self.values.shape[0]} inconsistent with win={self.win}"
            )


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # (M, T) normalized magnitudes in [0, 1]

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DownsampledMel:
    values: np.ndarray  # (M, ceil(T / factor))
    factor: int = 4


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (M, F), non-negative, peak-normalized triangles
    fmin: float
    fmax: float


@dataclass(frozen=True)
class LfccFrameSequence:
    coeffs: np.ndarray  # (D, T) static + delta + delta-delta


@dataclass(frozen=True)
class FeatureConfig:
    """Everything the feature chain needs; hashed into caches/checkpoints."""

    sample_rate: int = 22050
    win: int = 1024
    hop: int = 256
    n_mels: int = 80
    downsample: int = 4
    ref_lin: float = 60.0  # corpus max linear magnitude (set by prepare)
    ref_mel: float = 60.0  # corpus max mel magnitude (set by prepare)
    gl_iters: int = 100
    gl_sharpen: float = 1.3

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "win": self.win,
            "hop": self.hop,
            "n_mels": self.n_mels,
            "downsample": self.downsample,
            "ref_lin": self.ref_lin,
            "ref_mel": self.ref_mel,
            "gl_iters": self.gl_iters,
            "gl_sharpen": self.gl_sharpen,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**d)

    def with_refs(self, ref_lin: float, ref_mel: float) -> "FeatureConfig":
        return replace(self, ref_lin=ref_lin, ref_mel=ref_mel)


# ---------------------------------------------------------------------------
# STFT / iSTFT / Griffin-Lim
# ---------------------------------------------------------------------------


def _check_stft_args(win: int, hop: int) -> None:
    if win <= 0 or hop <= 0:
        raise ValueError(f"win and hop must be positive, got win={win} hop={hop}")
    if win & (win - 1):
        raise ValueError(f"win must be a power of two, got {win}")
    if hop > win:
        raise ValueError(f"hop={hop} exceeds win={win}")


def stft(wave: Waveform, win: int = 1024, hop: int = 256) -> np.ndarray:
    """Complex (win//2+1, T) grid; hann analysis window, centered frames."""
    _check_stft_args(win, hop)
    x = np.asarray(wave.samples, dtype=np.float64)
    if x.size < win:
        x = np.pad(x, (0, win - x.size))
    pad = win // 2
    x = np.pad(x, (pad, pad), mode="reflect")
    n_frames = 1 + (x.size - win) // hop
    window = np.hanning(win)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[:: hop][:n_frames]
    return (np.fft.rfft(frames * window, axis=1)).T.copy()


def istft(
    grid: np.ndarray, win: int = 1024, hop: int = 256, sample_rate: int = 22050
) -> Waveform:
    """Least-squares overlap-add inverse; returns length (T-1)*hop + win.

    Sample n of the result aligns with original sample n - win//2 of the
    signal that produced the grid through `stft`.
    """
    _check_stft_args(win, hop)
    if grid.shape[0] != win // 2 + 1:
        raise ValueError(
            f"grid has {grid.shape[0]} bins, expected {win // 2 + 1} for win={win}"
        )
    n_frames = grid.shape[1]
    window = np.hanning(win)
    frames = np.fft.irfft(grid.T, n=win, axis=1) * window
    length = (n_frames - 1) * hop + win
    out = np.zeros(length)
    norm = np.zeros(length)
    wsq = window * window
    for t in range(n_frames):
        out[t * hop : t * hop + win] += frames[t]
        norm[t * hop : t * hop + win] += wsq
    out /= np.maximum(norm, 1e-12)
    return Waveform(out, sample_rate=sample_rate)


def griffin_lim(
    mag: np.ndarray,
    iters: int = 100,
    win: int = 1024,
    hop: int = 256,
    sample_rate: int = 22050,
    seed: int = 0,
    momentum: float = 0.99,
    return_errors: bool = False,
):
    """Phase retrieval by alternating projections with a monotone safeguard.

    Starts from a seeded random phase (a zero phase is a symmetric fixed
    point that locks tones onto the integer-cycles-per-hop frequency grid).
    Each iteration tries a momentum-extrapolated projection and keeps it only
    if the consistency error || |STFT(x_k)| - mag ||_2 does not increase;
    otherwise it falls back to the plain projection step, which never
    increases the error.  The error sequence is therefore non-increasing by
    construction.

    Deterministic given ``seed``.  Output length is T * hop, aligned with
    the signal whose centered `stft` produced ``mag``.  With
    ``return_errors=True`` also returns the per-iteration error history
    (length iters + 1, starting at the initial estimate).
    """
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    _check_stft_args(win, hop)
    mag = np.asarray(mag, dtype=np.float64)
    if np.any(mag < 0) or not np.all(np.isfinite(mag)):
        raise ValueError("magnitudes must be finite and non-negative")
    t_frames = mag.shape[1]
    window = np.hanning(win)
    wsq = window * window
    length = (t_frames - 1) * hop + win

    def analyze(x: np.ndarray) -> np.ndarray:
        frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:t_frames]
        return np.fft.rfft(frames * window, axis=1).T

    def synthesize(grid: np.ndarray) -> np.ndarray:
        frames = np.fft.irfft(grid.T, n=win, axis=1) * window
        out = np.zeros(length)
        norm = np.zeros(length)
        for t in range(t_frames):
            out[t * hop : t * hop + win] += frames[t]
            norm[t * hop : t * hop + win] += wsq
        return out / np.maximum(norm, 1e-12)

    def project(spec: np.ndarray) -> np.ndarray:
        return mag * (spec / np.maximum(np.abs(spec), 1e-12))

    rng = np.random.default_rng(seed)
    x = synthesize(project(np.exp(2j * np.pi * rng.random(mag.shape))))
    spec = analyze(x)
    spec_prev = spec
    err = float(np.linalg.norm(np.abs(spec) - mag))
    errors = [err]
    for _ in range(iters):
        extrapolated = spec + momentum * (spec - spec_prev)
        cand = synthesize(project(extrapolated))
        cand_spec = analyze(cand)
        cand_err = float(np.linalg.norm(np.abs(cand_spec) - mag))
        if cand_err <= err:
            x, spec_prev, spec, err = cand, spec, cand_spec, cand_err
        else:
            plain = synthesize(project(spec))
            plain_spec = analyze(plain)
            x, spec_prev, spec = plain, spec, plain_spec
            err = float(np.linalg.norm(np.abs(plain_spec) - mag))
        errors.append(err)
    pad = win // 2
    out = np.zeros(t_frames * hop)
    avail = x[pad : pad + t_frames * hop]
    out[: avail.size] = avail
    wave = Waveform(out, sample_rate)
    return (wave, errors) if return_errors else wave


# ---------------------------------------------------------------------------
# mel filterbank and features
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _triangle_rows(centers_hz: np.ndarray, bin_freqs: np.ndarray) -> np.ndarray:
    """Peak-normalized triangles; row m spans (centers[m-1], centers[m+1])."""
    m = centers_hz.size - 2
    weights = np.zeros((m, bin_freqs.size))
    for i in range(m):
        left, center, right = centers_hz[i], centers_hz[i + 1], centers_hz[i + 2]
        up = (bin_freqs - left) / max(center - left, 1e-12)
        down = (right - bin_freqs) / max(right - center, 1e-12)
        weights[i] = np.clip(np.minimum(up, down), 0.0, None)
        if not np.any(weights[i] > 0):
            # guarantee non-empty support when a triangle is narrower than a bin
            weights[i, np.argmin(np.abs(bin_freqs - center))] = 1.0
    return weights


def build_mel_filterbank(
    n_mels: int = 80, n_bins: int = 513, sample_rate: int = 22050
) -> MelFilterbank:
    """Triangular filters with centers equally spaced on the mel scale
    between 0 Hz and Nyquist."""
    if n_mels < 1 or n_bins < 2:
        raise ValueError(f"need n_mels >= 1 and n_bins >= 2, got {n_mels}, {n_bins}")
    if n_mels > n_bins:
        raise ValueError(f"n_mels={n_mels} exceeds n_bins={n_bins}")
    fmax = sample_rate / 2.0
    centers = mel_to_hz(np.linspace(0.0, hz_to_mel(fmax), n_mels + 2))
    win = 2 * (n_bins - 1)
    bin_freqs = np.arange(n_bins) * sample_rate / win
    return MelFilterbank(_triangle_rows(centers, bin_freqs), fmin=0.0, fmax=fmax)


def normalize_db(mag: np.ndarray, ref: float) -> np.ndarray:
    """Compress magnitudes to [0, 1]: floor at -100 dB relative to ref."""
    ratio = np.maximum(np.asarray(mag, dtype=np.float64) / ref, LOG_FLOOR)
    return np.clip((20.0 * np.log10(ratio) + 100.0) / 100.0, 0.0, 1.0)


def denormalize_db(grid: np.ndarray, ref: float, sharpen: float = 1.3) -> np.ndarray:
    """Invert normalize_db and raise magnitudes to ``sharpen`` before
    Griffin-Lim; denormalize(normalize(m)) == m**sharpen / ref**(sharpen-1)."""
    db = 100.0 * np.asarray(grid, dtype=np.float64) - 100.0
    return ref * 10.0 ** (sharpen * db / 20.0)


def downsample_frames(mel: np.ndarray, factor: int = 4) -> np.ndarray:
    """Keep frames at indices 0 mod factor after right-padding the frame
    count to a multiple of factor with zeros; output has ceil(T/f) frames."""
    t = mel.shape[1]
    padded_t = -(-t // factor) * factor
    if padded_t != t:
        mel = np.pad(mel, ((0, 0), (0, padded_t - t)))
    return mel[:, ::factor].copy()


def wave_to_features(
    wave: Waveform, config: FeatureConfig
) -> tuple[LinearSpectrogram, MelSpectrogram, DownsampledMel]:
    """Full feature chain: normalized linear spectrogram, mel spectrogram and
    time-downsampled mel.  The waveform must already be at the configured
    sample rate."""
    if wave.sample_rate != config.sample_rate:
        raise ValueError(
            f"waveform at {wave.sample_rate} Hz, expected {config.sample_rate};"
            " resample first"
        )
    linmag = np.abs(stft(wave, config.win, config.hop))
    fb = build_mel_filterbank(config.n_mels, config.win // 2 + 1, config.sample_rate)
    melmag = fb.weights @ linmag
    lin = normalize_db(linmag, config.ref_lin).astype(np.float32)
    mel = normalize_db(melmag, config.ref_mel).astype(np.float32)
    dmel = downsample_frames(mel, config.downsample)
    return (
        LinearSpectrogram(lin, config.hop, config.win, config.sample_rate),
        MelSpectrogram(mel),
        DownsampledMel(dmel, config.downsample),
    )


def raw_magnitudes(wave: Waveform, config: FeatureConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized (linear, mel) magnitude grids; used by prepare to find
    the corpus reference levels."""
    linmag = np.abs(stft(wave, config.win, config.hop))
    fb = build_mel_filterbank(config.n_mels, config.win // 2 + 1, config.sample_rate)
    return linmag, fb.weights @ linmag


# ---------------------------------------------------------------------------
# LFCC front-end
# ---------------------------------------------------------------------------


def dct_ii_ortho(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Orthonormal DCT-II along ``axis``."""
    return scipy.fft.dct(x, type=2, axis=axis, norm="ortho")


def _frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    if x.size < win:
        x = np.pad(x, (0, win - x.size))
    n_frames = 1 + (x.size - win) // hop
    return np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]


def lfcc(
    wave: Waveform,
    n_coeffs: int = 20,
    n_filters: int = 20,
    win_ms: float = 30.0,
    hop_ms: float = 15.0,
) -> LfccFrameSequence:
    """Linear-frequency cepstral coefficients with delta and delta-delta.

    30 ms / 15 ms framing, linear-spaced triangular filters over log
    energies, orthonormal DCT-II keeping ``n_coeffs`` statics (incl. c0);
    output dimension is 3 * n_coeffs.
    """
    sr = wave.sample_rate
    win = max(int(round(win_ms * sr / 1000.0)), 2)
    hop = max(int(round(hop_ms * sr / 1000.0)), 1)
    frames = _frame_signal(np.asarray(wave.samples, dtype=np.float64), win, hop)
    spec = np.abs(np.fft.rfft(frames * np.hamming(win), axis=1)) ** 2
    n_bins = spec.shape[1]
    edges = np.linspace(0.0, sr / 2.0, n_filters + 2)
    bin_freqs = np.linspace(0.0, sr / 2.0, n_bins)
    fb = _triangle_rows(edges, bin_freqs)
    energies = np.log(fb @ spec.T + 1e-10)
    static = dct_ii_ortho(energies, axis=0)[:n_coeffs]
    delta = _delta(static)
    return LfccFrameSequence(
        np.vstack([static, delta, _delta(delta)]).astype(np.float32)
    )


def _delta(c: np.ndarray) -> np.ndarray:
    """Symmetric first difference over frames with edge replication."""
    padded = np.pad(c, ((0, 0), (1, 1)), mode="edge")
    return (padded[:, 2:] - padded[:, :-2]) / 2.0


# ---------------------------------------------------------------------------
# resampling and WAV I/O
# ---------------------------------------------------------------------------


def resample(wave: Waveform, target_rate: int) -> Waveform:
    """Rational-ratio polyphase resampling, band-limited below the new
    Nyquist."""
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if target_rate == wave.sample_rate:
        return wave
    g = np.gcd(int(target_rate), int(wave.sample_rate))
    up, down = target_rate // g, wave.sample_rate // g
    out = scipy.signal.resample_poly(np.asarray(wave.samples, dtype=np.float64), up, down)
    return Waveform(out, target_rate)


def read_wav(path) -> Waveform:
    """PCM16 mono RIFF/WAVE, samples scaled to [-1, 1]."""
    try:
        with wave_mod.open(str(path), "rb") as f:
            if f.getnchannels() != 1:
                raise FormatError(f"{path}: only mono WAV is supported")
            if f.getsampwidth() != 2:
                raise FormatError(f"{path}: only 16-bit PCM is supported")
            if f.getcomptype() != "NONE":
                raise FormatError(f"{path}: compressed WAV is not supported")
            rate = f.getframerate()
            raw = f.readframes(f.getnframes())
    except wave_mod.Error as e:
        raise FormatError(f"{path}: malformed WAV ({e})") from e
    except EOFError as e:
        raise FormatError(f"{path}: truncated WAV") from e
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(wave: Waveform, path) -> None:
    x = np.clip(np.asarray(wave.samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave_mod.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(wave.sample_rate)
        f.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# feature cache files
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"MFRG"
_CACHE_VERSION = 1


def write_feature_cache(grid: np.ndarray, path) -> None:
    """Binary grid cache: magic, version u32, rows u32, cols u32, then
    row-major little-endian float32."""
    grid = np.ascontiguousarray(grid, dtype="<f4")
    if grid.ndim != 2:
        raise ValueError(f"feature cache expects a 2-D grid, got shape {grid.shape}")
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<III", _CACHE_VERSION, grid.shape[0], grid.shape[1]))
        f.write(grid.tobytes())


def read_feature_cache(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) < 16 or head[:4] != _CACHE_MAGIC:
            raise FormatError(f"{path}: bad feature-cache header")
        version, rows, cols = struct.unpack("<III", head[4:])
        if version != _CACHE_VERSION:
            raise FormatError(f"{path}: unsupported cache version {version}")
        payload = f.read(rows * cols * 4)
        if len(payload) != rows * cols * 4:
            raise FormatError(
                f"{path}: truncated cache at offset {16 + len(payload)}"
            )
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()
