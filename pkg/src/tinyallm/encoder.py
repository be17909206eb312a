"""Frozen audio encoder exposing features at multiple depths.

Layer 0 is a log-mel spectrogram (the documented filterbank below); layers
1..L-1 are successive tanh mixes of the previous layer through fixed
random weights.  Nothing here is ever trained: the adapter learns to
weight and summarize these features, standing in for a frozen pretrained
encoder whose intermediate layers feed a weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import combined_digest
from .errors import ConfigurationError, DataError
from .rng import Stream

SAMPLE_RATE = 16000
ENCODER_VERSION = "enc-v1"

D_ENC = 32
N_LAYERS = 4
FRAME_HOP_S = 0.010
HOP_SAMPLES = 160
WIN_SAMPLES = 400
N_FFT = 512
MEL_FMIN = 20.0
MEL_FMAX = 7600.0
_LOG_FLOOR = 1e-10


def hz_to_mel(f):
    """HTK mel scale: 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = D_ENC, n_fft: int = N_FFT) -> np.ndarray:
    """Triangular mel filters [n_mels x n_fft//2+1].

    Construction: n_mels+2 points equally spaced on the HTK mel scale
    between MEL_FMIN and MEL_FMAX, mapped back to Hz, triangles over FFT
    bin center frequencies, each filter normalized to unit area.
    """
    mel_pts = np.linspace(hz_to_mel(MEL_FMIN), hz_to_mel(MEL_FMAX), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(n_fft // 2 + 1) * (SAMPLE_RATE / n_fft)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for i in range(n_mels):
        lo, mid, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bin_freqs - lo) / (mid - lo)
        down = (hi - bin_freqs) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
        area = fb[i].sum()
        if area > 0:
            fb[i] /= area
    return fb


@dataclass(frozen=True)
class LayerStack:
    """Per-frame features at every encoder depth: [T x L x d_enc]."""

    features: np.ndarray
    frame_hop: float = FRAME_HOP_S

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def layer_count(self) -> int:
        return self.features.shape[1]

    @property
    def d_enc(self) -> int:
        return self.features.shape[2]


@dataclass(frozen=True)
class EncoderParams:
    """Fixed weights of the feature pipeline; immutable after construction."""

    mel_fb: np.ndarray
    mix_weights: tuple[np.ndarray, ...]  # L-1 matrices [d_enc x d_enc]
    seed: int
    version: str = ENCODER_VERSION

    def __post_init__(self):
        self.mel_fb.setflags(write=False)
        for w in self.mix_weights:
            w.setflags(write=False)

    @property
    def d_enc(self) -> int:
        return self.mel_fb.shape[0]

    @property
    def layer_count(self) -> int:
        return len(self.mix_weights) + 1

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"mel_fb": self.mel_fb}
        for i, w in enumerate(self.mix_weights):
            out[f"mix_{i}"] = w
        return out


def init_encoder(seed: int = 0, d_enc: int = D_ENC, n_layers: int = N_LAYERS) -> EncoderParams:
    """Build frozen encoder weights from a seed."""
    if n_layers < 2:
        raise ConfigurationError("encoder needs >= 2 layers for a nontrivial weighted sum")
    rng = Stream(seed).derive("encoder", ENCODER_VERSION)
    mixes = tuple(
        rng.derive("mix", i).normal((d_enc, d_enc), scale=1.0 / np.sqrt(d_enc))
        for i in range(n_layers - 1)
    )
    return EncoderParams(mel_fb=mel_filterbank(d_enc), mix_weights=mixes, seed=seed)


def freeze_checksum(params: EncoderParams) -> str:
    """Content digest over every encoder weight, in named order."""
    return combined_digest(params.arrays())


def log_mel(waveform: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Log-mel features [T x d_enc] with T = ceil(n_samples / hop).

    Frames start at multiples of the hop; the final partial window is
    zero-padded, so every clip of duration d yields exactly ceil(d / hop)
    frames.  Hann window, magnitude-squared FFT, mel projection, log10
    with a fixed floor.
    """
    n = waveform.size
    n_frames = -(-n // HOP_SAMPLES)  # ceil
    padded = np.zeros((n_frames - 1) * HOP_SAMPLES + WIN_SAMPLES)
    padded[:n] = waveform
    idx = np.arange(WIN_SAMPLES)[None, :] + HOP_SAMPLES * np.arange(n_frames)[:, None]
    frames = padded[idx] * np.hanning(WIN_SAMPLES)[None, :]
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    return np.log10(power @ params.mel_fb.T + _LOG_FLOOR)


def encode(waveform: np.ndarray, params: EncoderParams) -> LayerStack:
    """Waveform -> LayerStack [T x L x d_enc]; pure and frozen."""
    waveform = np.asarray(waveform, dtype=np.float64)
    if waveform.ndim != 1:
        raise DataError(f"waveform must be 1-D, got shape {waveform.shape}")
    if not np.isfinite(waveform).all():
        raise DataError("waveform contains NaN or Inf")
    duration = waveform.size / SAMPLE_RATE
    if not (0.5 <= duration <= 10.0):
        raise DataError(f"clip duration {duration:.3f} s outside [0.5, 10.0]")
    layers = [log_mel(waveform, params)]
    for w in params.mix_weights:
        layers.append(np.tanh(layers[-1] @ w))
    return LayerStack(features=np.stack(layers, axis=1))
