"""MFCC extraction from raw PCM and the trainable lift to the shared dim.

Framing defaults are the usual 25 ms / 10 ms speech settings at 16 kHz with
40 HTK-scale Mel filters and an orthonormal DCT-II.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.fft import dct
from scipy.io import wavfile

from .features import FeatureSequence, InvariantError


@dataclass
class MfccConfig:
    sample_rate: int = 16000
    frame_len: int = 400
    hop: int = 160
    n_fft: int = 512
    n_mels: int = 40
    n_mfcc: int = 40
    fmin: float = 0.0
    fmax: float | None = None  # defaults to sample_rate / 2
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.fmax is None:
            self.fmax = self.sample_rate / 2.0
        if self.frame_len > self.n_fft:
            raise InvariantError("frame_len must not exceed n_fft")
        if self.hop < 1:
            raise InvariantError("hop must be >= 1")
        if self.n_mfcc > self.n_mels:
            raise InvariantError("n_mfcc must not exceed n_mels")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2.0:
            raise InvariantError("need fmin < fmax <= sample_rate/2")


def hz_to_mel(f):
    """HTK Mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular filters, shape (n_mels, n_fft // 2 + 1).

    Triangle corners sit at Mel-equispaced frequencies between fmin and fmax;
    weights are evaluated at the continuous FFT-bin frequencies.
    """
    edges = mel_to_hz(
        np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    )
    bin_freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    fb = np.zeros((cfg.n_mels, len(bin_freqs)))
    for m in range(cfg.n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - bin_freqs) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def mel_filter_centers(cfg: MfccConfig) -> np.ndarray:
    """Center frequencies (Hz) of the n_mels triangular filters."""
    edges = mel_to_hz(
        np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    )
    return edges[1:-1]


def frame_count(n_samples: int, cfg: MfccConfig) -> int:
    return (n_samples - cfg.frame_len) // cfg.hop + 1


def log_mel_energies(signal: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    """Framed log-Mel energies, shape (m, n_mels); the pre-DCT stage."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise InvariantError("signal must be 1-D PCM samples")
    if np.any(np.isnan(signal)):
        raise InvariantError("signal contains NaN")
    if len(signal) < cfg.frame_len:
        raise InvariantError(
            f"signal too short: {len(signal)} < frame_len {cfg.frame_len}"
        )
    m = frame_count(len(signal), cfg)
    idx = np.arange(cfg.frame_len)[None, :] + cfg.hop * np.arange(m)[:, None]
    # periodic Hann: 0.5 * (1 - cos(2*pi*k / N))
    window = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(cfg.frame_len) / cfg.frame_len))
    frames = signal[idx] * window
    spectrum = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1))
    energies = spectrum @ mel_filterbank(cfg).T
    return np.log(np.maximum(energies, cfg.log_floor))


def compute_mfcc(signal: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    """MFCC matrix, shape (m, n_mfcc), m = (len - frame_len) // hop + 1."""
    logmel = log_mel_energies(signal, cfg)
    coeffs = dct(logmel, type=2, axis=1, norm="ortho")[:, : cfg.n_mfcc]
    if not np.all(np.isfinite(coeffs)):
        raise InvariantError("non-finite MFCC output")
    return coeffs


def read_wav(path: str | Path) -> tuple[int, np.ndarray]:
    """16-bit PCM WAV to samples in [-1, 1]; stereo is averaged to mono."""
    rate, data = wavfile.read(path)
    if data.dtype != np.int16:
        raise InvariantError(f"{path}: expected 16-bit PCM, got dtype {data.dtype}")
    samples = data.astype(np.float64) / 32768.0
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return rate, samples


def lift_audio(
    mfcc: torch.Tensor | np.ndarray, proj: torch.Tensor, bias: torch.Tensor
) -> torch.Tensor:
    """Linear lift of (m, n_mfcc) coefficients to the shared embedding dim."""
    if not torch.is_tensor(mfcc):
        mfcc = torch.as_tensor(mfcc, dtype=torch.float64)
    if mfcc.shape[1] != proj.shape[0] or proj.shape[1] != bias.shape[0]:
        raise InvariantError(
            f"lift shapes inconsistent: mfcc {tuple(mfcc.shape)}, "
            f"proj {tuple(proj.shape)}, bias {tuple(bias.shape)}"
        )
    return mfcc @ proj + bias


def lift_to_sequence(mfcc: np.ndarray, proj: torch.Tensor, bias: torch.Tensor) -> FeatureSequence:
    """Non-differentiable convenience wrapper returning a FeatureSequence."""
    with torch.no_grad():
        tokens = lift_audio(mfcc, proj, bias).numpy()
    return FeatureSequence("audio", tokens.shape[1], tokens)
