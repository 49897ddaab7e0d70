"""Deterministic stand-in for the speech tokenizer, decoder and ASR.

Every word maps to one token and every token decodes to a fixed-length
Hann-enveloped tone plus noise whose spectral tilt is speaker-specific
(a crude long-term timbre). A segment depends only on (token, speaker, seed), so a
rollout that reproduces an original word reproduces its audio bit-for-bit,
which is what a frozen decoder prompted with the original speech would aim
for. The ASR side inverts the mapping by template matching.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.fft import irfft, rfft
from scipy.signal.windows import hann

from .dsp import CepstrogramConfig, Waveform
from .errors import InvalidInputError
from .textedit import EditAlignment, Transcript

_NATO = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliett kilo lima "
    "mike november oscar papa quebec romeo sierra tango uniform victor whiskey "
    "xray yankee zulu"
).split()


@dataclass(frozen=True)
class SynthSpec:
    vocab_size: int = 16
    base_freq: float = 300.0
    freq_step: float = 150.0
    segment_ms: float = 80.0
    sample_rate: int = 8000
    speaker_offsets: tuple[float, ...] = (-45.0, -15.0, 15.0, 45.0)
    # power-law exponent of each speaker's noise amplitude spectrum
    speaker_tilts: tuple[float, ...] = (-1.5, -0.5, 0.5, 1.5)
    noise_amp: float = 0.01
    amplitude: float = 0.5
    min_words: int = 3
    max_words: int = 8

    def __post_init__(self):
        object.__setattr__(self, "speaker_offsets", tuple(float(o) for o in self.speaker_offsets))
        object.__setattr__(self, "speaker_tilts", tuple(float(o) for o in self.speaker_tilts))
        if len(self.speaker_tilts) != len(self.speaker_offsets):
            raise InvalidInputError("need one noise tilt per speaker")
        if self.vocab_size < 2:
            raise InvalidInputError("vocab_size must be >= 2")
        if not self.speaker_offsets:
            raise InvalidInputError("need at least one speaker")
        top = self.base_freq + self.vocab_size * self.freq_step + max(map(abs, self.speaker_offsets))
        if top >= self.sample_rate / 2:
            raise InvalidInputError(f"highest tone {top} Hz reaches Nyquist")
        if max(map(abs, self.speaker_offsets)) >= self.freq_step / 2:
            raise InvalidInputError("speaker offsets must stay within half a frequency step")
        cfg = self.cepstrogram_config()
        if self.segment_samples < cfg.frame_length + cfg.hop:
            raise InvalidInputError("segment must span at least two analysis frames")
        if not 1 <= self.min_words <= self.max_words:
            raise InvalidInputError("need 1 <= min_words <= max_words")

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_ms * self.sample_rate / 1000.0))

    @property
    def segment_seconds(self) -> float:
        return self.segment_samples / self.sample_rate

    @property
    def n_speakers(self) -> int:
        return len(self.speaker_offsets)

    def cepstrogram_config(self) -> CepstrogramConfig:
        return CepstrogramConfig.for_rate(self.sample_rate)

    def token_freq(self, token, speaker_id: int = 0):
        return self.base_freq + np.asarray(token) * self.freq_step + self.speaker_offsets[speaker_id]


def lexicon(vocab_size: int) -> tuple[str, ...]:
    """Word for each token id."""
    words = list(_NATO[:vocab_size])
    words += [f"word{k}" for k in range(len(words), vocab_size)]
    return tuple(words)


def encode(transcript: Transcript, spec: SynthSpec) -> tuple[int, ...]:
    index = _word_index(spec.vocab_size)
    try:
        return tuple(index[w] for w in transcript.words)
    except KeyError as e:
        raise InvalidInputError(f"word {e.args[0]!r} not in the synthetic lexicon") from None


def words_of(tokens: Iterable[int], spec: SynthSpec) -> tuple[str, ...]:
    lex = lexicon(spec.vocab_size)
    return tuple(lex[int(t)] for t in tokens)


@lru_cache(maxsize=8)
def _word_index(vocab_size: int) -> dict[str, int]:
    return {w: i for i, w in enumerate(lexicon(vocab_size))}


@dataclass(frozen=True)
class CorpusPair:
    transcript: Transcript
    tokens: tuple[int, ...]
    speaker_id: int
    seed: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "transcript": str(self.transcript),
                "tokens": list(self.tokens),
                "speaker_id": self.speaker_id,
                "seed": self.seed,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> CorpusPair:
        d = json.loads(line)
        return cls(Transcript(d["transcript"].split()), tuple(d["tokens"]), int(d["speaker_id"]), int(d["seed"]))


@lru_cache(maxsize=4096)
def _segment(token: int, speaker_id: int, seed: int, spec: SynthSpec) -> np.ndarray:
    n = spec.segment_samples
    t = np.arange(n) / spec.sample_rate
    tone = spec.amplitude * hann(n, sym=True) * np.sin(2 * np.pi * spec.token_freq(token, speaker_id) * t)
    rng = np.random.default_rng([seed & 0xFFFFFFFF, speaker_id, token])
    seg = tone + spec.noise_amp * irfft(rfft(rng.standard_normal(n)) * _noise_shape(spec, speaker_id), n=n)
    seg.setflags(write=False)
    return seg


@lru_cache(maxsize=64)
def _noise_shape(spec: SynthSpec, speaker_id: int) -> np.ndarray:
    # unit-power spectral tilt: the speaker's long-term envelope
    n = spec.segment_samples
    f = np.maximum(np.fft.rfftfreq(n, 1.0 / spec.sample_rate), 100.0) / 1000.0
    shape = f ** spec.speaker_tilts[speaker_id]
    return shape / np.sqrt(np.mean(shape**2))


def decode(tokens: Sequence[int], speaker_id: int, spec: SynthSpec, seed: int) -> Waveform:
    """Render a token sequence as concatenated tone segments."""
    if not 0 <= speaker_id < spec.n_speakers:
        raise InvalidInputError(f"unknown speaker {speaker_id}")
    toks = [int(t) for t in tokens]
    for t in toks:
        if not 0 <= t < spec.vocab_size:
            raise InvalidInputError(f"token {t} outside vocabulary of {spec.vocab_size}")
    if not toks:
        return Waveform(np.zeros(0), spec.sample_rate)
    return Waveform(np.concatenate([_segment(t, speaker_id, seed, spec) for t in toks]), spec.sample_rate)


@lru_cache(maxsize=8)
def _asr_templates(spec: SynthSpec, n_fft: int) -> np.ndarray:
    freqs = np.arange(n_fft // 2 + 1) * spec.sample_rate / n_fft
    centers = spec.base_freq + np.arange(spec.vocab_size) * spec.freq_step
    width = spec.freq_step / 4.0
    return np.exp(-0.5 * ((freqs[None, :] - centers[:, None]) / width) ** 2)


def oracle_asr_tokens(w: Waveform, spec: SynthSpec) -> tuple[int, ...]:
    """Per segment, the token whose spectral template best matches."""
    n = len(w)
    seg = spec.segment_samples
    if n == 0:
        return ()
    n_seg = max(1, int(round(n / seg)))
    n_fft = 1 << (4 * seg - 1).bit_length()
    templates = _asr_templates(spec, n_fft)
    out = []
    for k in range(n_seg):
        chunk = w.samples[k * seg : min((k + 1) * seg, n)]
        if chunk.size == 0:
            break
        mag = np.abs(rfft(chunk, n=n_fft))
        out.append(int(np.argmax(templates @ mag)))
    return tuple(out)


def oracle_asr(w: Waveform, spec: SynthSpec) -> tuple[str, ...]:
    """Transcribe a waveform; an empty waveform gives an empty word tuple."""
    return words_of(oracle_asr_tokens(w, spec), spec)


def index_spans(indices: Iterable[int], length: int, spec: SynthSpec) -> list[tuple[float, float]]:
    """Merge word indices into sorted, disjoint ``(start_s, end_s)`` intervals."""
    idx = sorted(set(int(i) for i in indices))
    for i in idx:
        if not 0 <= i < length:
            raise InvalidInputError(f"word index {i} out of range for length {length}")
    spans: list[list[int]] = []
    for i in idx:
        if spans and spans[-1][1] == i:
            spans[-1][1] = i + 1
        else:
            spans.append([i, i + 1])
    d = spec.segment_seconds
    return [(a * d, b * d) for a, b in spans]


def token_time_spans(
    tokens_ori: Sequence[int],
    tokens_tar: Sequence[int],
    alignment: EditAlignment,
    spec: SynthSpec,
) -> tuple[list[tuple[float, float]], list[tuple[float, float]]]:
    """Time intervals of the kept words on the original and target timelines."""
    ori = index_spans((i for i, _ in alignment.kept_pairs), len(tokens_ori), spec)
    tar = index_spans((j for _, j in alignment.kept_pairs), len(tokens_tar), spec)
    return ori, tar


def make_corpus(n: int, spec: SynthSpec, seed: int) -> list[CorpusPair]:
    """``n`` random utterances, lengths uniform in ``[min_words, max_words]``,
    speakers assigned round-robin."""
    if n < 1:
        raise InvalidInputError("corpus size must be >= 1")
    rng = np.random.default_rng(seed)
    lex = lexicon(spec.vocab_size)
    pairs = []
    for i in range(n):
        length = int(rng.integers(spec.min_words, spec.max_words + 1))
        toks = tuple(int(t) for t in rng.integers(0, spec.vocab_size, size=length))
        pairs.append(
            CorpusPair(
                Transcript(tuple(lex[t] for t in toks)),
                toks,
                i % spec.n_speakers,
                int(rng.integers(0, 2**31 - 1)),
            )
        )
    return pairs


def write_corpus(path, pairs: Iterable[CorpusPair]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(p.to_json() + "\n")


def read_corpus(path) -> list[CorpusPair]:
    with open(path, encoding="utf-8") as f:
        return [CorpusPair.from_json(line) for line in f if line.strip()]


def spec_to_dict(spec: SynthSpec) -> dict:
    d = asdict(spec)
    d["speaker_offsets"] = list(spec.speaker_offsets)
    return d
