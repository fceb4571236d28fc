"""PCM audio to log-mel spectrograms.

Defaults follow the DCASE-style front-end: 16 kHz input, 2048-point FFT,
hop 256, 128 Slaney-scale mel bands up to 8 kHz, natural log with a 1e-5
floor. There is no resampling; a clip whose rate disagrees with the
config is rejected upstream.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .errors import ConfigError, DecodeError, ShapeError


@dataclass
class MelConfig:
    sample_rate: int = 16000
    n_fft: int = 2048
    win_length: int = 2048
    hop_length: int = 256
    n_mels: int = 128
    f_min: float = 0.0
    f_max: float = 8000.0
    log_floor: float = 1e-5

    def __post_init__(self):
        if not (self.f_min < self.f_max <= self.sample_rate / 2):
            raise ConfigError("need f_min < f_max <= sample_rate/2")
        if not (self.hop_length <= self.win_length <= self.n_fft):
            raise ConfigError("need hop_length <= win_length <= n_fft")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")


@dataclass
class AudioClip:
    samples: np.ndarray  # mono, float64 in [-1, 1]
    sample_rate: int


def load_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file (PCM16 or float32), averaging channels to mono.

    PCM16 is scaled by 1/32768 so -32768 maps to -1.0 exactly. The sample
    rate comes from the header; no resampling happens here.
    """
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError, EOFError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DecodeError(f"unsupported sample format {data.dtype} in {path}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise DecodeError(f"non-finite samples in {path}")
    return AudioClip(samples=samples, sample_rate=int(rate))


def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(clip: AudioClip, cfg: MelConfig) -> np.ndarray:
    """Magnitude-squared STFT, [n_fft/2+1, frames].

    Frames are centered: the signal is reflect-padded by n_fft/2 on both
    sides, giving 1 + floor(len/hop) frames. Periodic Hann window.
    """
    if clip.sample_rate != cfg.sample_rate:
        raise ConfigError(f"clip rate {clip.sample_rate} != config rate {cfg.sample_rate}")
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.size == 0:
        raise ShapeError("empty clip")
    pad = cfg.n_fft // 2
    xp = np.pad(x, pad, mode="reflect") if x.size > 1 else np.pad(x, pad)
    window = np.zeros(cfg.n_fft)
    off = (cfg.n_fft - cfg.win_length) // 2
    window[off : off + cfg.win_length] = hann_periodic(cfg.win_length)
    n_frames = 1 + x.size // cfg.hop_length
    idx = np.arange(cfg.n_fft)[None, :] + cfg.hop_length * np.arange(n_frames)[:, None]
    frames = xp[idx] * window
    spec = np.fft.rfft(frames, n=cfg.n_fft, axis=1)
    return np.ascontiguousarray((spec.real**2 + spec.imag**2).T)


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3.0
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    mel = f / f_sp
    above = f >= min_log_hz
    mel = np.where(above, min_log_mel + np.log(np.maximum(f, min_log_hz) / min_log_hz) / logstep, mel)
    return mel


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3.0
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    f = m * f_sp
    above = m >= min_log_mel
    return np.where(above, min_log_hz * np.exp(logstep * (m - min_log_mel)), f)


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Area-normalized triangular filters, [n_mels, n_fft/2+1]."""
    n_bins = cfg.n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    mel_pts = np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((cfg.n_mels, n_bins))
    for i in range(cfg.n_mels):
        lo, ctr, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (fft_freqs - lo) / (ctr - lo)
        down = (hi - fft_freqs) / (hi - ctr)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
        if not np.any(fb[i] > 0):
            raise ConfigError(f"mel filter {i} has empty support; lower n_mels or raise n_fft")
        fb[i] *= 2.0 / (hi - lo)  # Slaney area normalization
    return fb


def log_mel(power: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """Apply the mel filterbank then ln(max(., log_floor)), [n_mels, frames]."""
    n_bins = cfg.n_fft // 2 + 1
    if power.ndim != 2 or power.shape[0] != n_bins:
        raise ShapeError(f"expected [{n_bins}, frames], got {power.shape}")
    fb = mel_filterbank(cfg)
    mel = fb @ power
    return np.log(np.maximum(mel, cfg.log_floor))


def featurize_clip(clip: AudioClip, cfg: MelConfig) -> np.ndarray:
    return log_mel(stft_power(clip, cfg), cfg)
