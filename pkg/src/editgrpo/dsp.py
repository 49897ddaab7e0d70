"""Mel-cepstra, DTW and mel-cepstral distortion.

The cepstral pipeline is the textbook one: Hann-windowed frames, power
spectrum, triangular mel filterbank, natural log, orthonormal DCT-II, with
coefficient 0 dropped. MCD follows the Kubichek convention averaged along a
DTW path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct, rfft
from scipy.signal.windows import hann

from . import _kernels
from .errors import InvalidInputError

LOG_FLOOR = 1e-10
MCD_CONST = 10.0 / math.log(10.0) * math.sqrt(2.0)


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise InvalidInputError("waveform must be one-dimensional")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise InvalidInputError("sample_rate must be positive")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def dump_f32(self, path) -> None:
        """Write headerless little-endian float32 samples (debugging aid)."""
        self.samples.astype("<f4").tofile(path)

    @classmethod
    def load_f32(cls, path, sample_rate: int) -> Waveform:
        return cls(np.fromfile(path, dtype="<f4").astype(np.float64), sample_rate)


@dataclass(frozen=True)
class CepstrogramConfig:
    frame_length: int = 200
    hop: int = 80
    fft_size: int = 512
    n_mels: int = 64
    n_ceps: int = 13

    def __post_init__(self):
        if self.fft_size < self.frame_length:
            raise InvalidInputError("fft_size must be >= frame_length")
        if not 0 < self.hop <= self.frame_length:
            raise InvalidInputError("hop must be in 1..frame_length")
        if not 1 <= self.n_ceps < self.n_mels:
            # c0 is dropped, so at most n_mels - 1 coefficients remain
            raise InvalidInputError("n_ceps must be in 1..n_mels-1")

    @classmethod
    def for_rate(cls, sample_rate: int, **overrides) -> CepstrogramConfig:
        """25 ms frames and 10 ms hop at ``sample_rate``."""
        frame = int(round(0.025 * sample_rate))
        kw = dict(
            frame_length=frame,
            hop=int(round(0.010 * sample_rate)),
            fft_size=2 * (1 << (frame - 1).bit_length()),
        )
        kw.update(overrides)
        return cls(**kw)


@dataclass(frozen=True)
class DtwResult:
    path: np.ndarray
    total_cost: float


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(sample_rate: int, fft_size: int, n_mels: int) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape ``(n_mels, fft_size//2+1)``."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=16)
def _window(n: int) -> np.ndarray:
    return hann(n, sym=False)


def log_mel(w: Waveform, cfg: CepstrogramConfig) -> np.ndarray:
    """Log mel energies per frame, shape ``(n_frames, n_mels)``."""
    if len(w) < cfg.frame_length:
        raise InvalidInputError(
            f"waveform has {len(w)} samples, need at least {cfg.frame_length}"
        )
    frames = sliding_window_view(w.samples, cfg.frame_length)[:: cfg.hop]
    spec = np.abs(rfft(frames * _window(cfg.frame_length), n=cfg.fft_size, axis=1)) ** 2
    fb = mel_filterbank(w.sample_rate, cfg.fft_size, cfg.n_mels)
    return np.log(np.maximum(spec @ fb.T, LOG_FLOOR))


def mel_cepstra(w: Waveform, cfg: CepstrogramConfig) -> np.ndarray:
    """Mel-cepstral coefficients 1..n_ceps per frame, shape ``(n_frames, n_ceps)``."""
    c = dct(log_mel(w, cfg), type=2, norm="ortho", axis=1)
    return np.ascontiguousarray(c[:, 1 : cfg.n_ceps + 1])


def _check_frames(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidInputError("need a non-empty (frames, dims) array")
    return x


def frame_distances(a, b) -> np.ndarray:
    """Euclidean distance between every frame of ``a`` and every frame of ``b``."""
    a, b = _check_frames(a), _check_frames(b)
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError("frame dimensions differ")
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    # the expansion loses exactness for identical frames; fix those up
    d = np.sqrt(np.maximum(d2, 0.0))
    small = d < 1e-6
    if small.any():
        ii, jj = np.nonzero(small)
        d[ii, jj] = np.linalg.norm(a[ii] - b[jj], axis=1)
    return d


def dtw(a, b) -> DtwResult:
    """Minimum-cost monotone alignment with steps (1,0), (0,1), (1,1).

    The backtrace prefers the diagonal step on ties.
    """
    cost = frame_distances(a, b)
    acc = _kernels.dtw_accumulate(cost)
    path = _kernels.dtw_backtrack(acc)
    return DtwResult(path, float(acc[-1, -1]))


def mcd(a, b) -> float:
    """DTW-aligned mel-cepstral distortion in dB, averaged over path pairs."""
    res = dtw(a, b)
    return MCD_CONST * res.total_cost / len(res.path)


def extract_region(w: Waveform, spans: Sequence[tuple[float, float]]) -> Waveform:
    """Concatenate the samples inside each ``(start_s, end_s)`` interval."""
    sr = w.sample_rate
    pieces = []
    last = 0
    for start, end in spans:
        i0, i1 = int(round(start * sr)), int(round(end * sr))
        if i0 < last or i1 < i0 or i1 > len(w):
            raise InvalidInputError(
                f"span ({start}, {end}) out of range or unsorted for {w.duration:.4f}s waveform"
            )
        pieces.append(w.samples[i0:i1])
        last = i1
    if not pieces:
        return Waveform(np.zeros(0), sr)
    return Waveform(np.concatenate(pieces), sr)


def speaker_embedding(w: Waveform, cfg: CepstrogramConfig) -> np.ndarray:
    """Unit-norm time average of log-mel frames."""
    v = log_mel(w, cfg).mean(axis=0)
    norm = np.linalg.norm(v)
    if norm == 0.0 or not np.isfinite(norm):
        e = np.zeros_like(v)
        e[0] = 1.0
        return e
    return v / norm
