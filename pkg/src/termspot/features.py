"""Acoustic feature extraction: MFCC and PLP with optional mean-variance
normalization, plus the SPTF1 binary container used to import externally
computed (e.g. neural) feature matrices.

Data is kept as float32 throughout so that the SPTF1 container (f32 payload)
round-trips bit-exactly. All DSP runs in float64 internally.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-10
STD_FLOOR = 1e-10

# Guard against float slop in seconds -> frame index conversion: both the
# division (0.5/0.01 evaluates below 50.0) and the float32 quantization of
# frame_shift (relative error ~2e-8, so the slop grows with the index).
def _index_eps(x: float) -> float:
    return 1e-6 + abs(x) * 1e-7


class FeatureError(ValueError):
    """Raised for unusable inputs or corrupt feature files."""


@dataclass
class FeatureMatrix:
    """frames x dims acoustic representation with frame timing metadata.

    frame_shift and frame_length are quantized to float32 precision at
    construction: the SPTF1 header stores them as f32 and save/load must be
    an exact inverse.
    """

    data: np.ndarray
    frame_shift: float
    frame_length: float
    kind: str = "external"
    normalized: bool = False

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise FeatureError(f"feature matrix must be 2-D and non-empty, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise FeatureError("feature matrix contains non-finite values")
        self.frame_shift = float(np.float32(self.frame_shift))
        self.frame_length = float(np.float32(self.frame_length))
        if self.frame_shift <= 0:
            raise FeatureError("frame_shift must be > 0")
        if self.frame_length < self.frame_shift:
            raise FeatureError("frame_length must be >= frame_shift")

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (
            np.array_equal(self.data, other.data)
            and self.frame_shift == other.frame_shift
            and self.frame_length == other.frame_length
            and self.kind == other.kind
            and self.normalized == other.normalized
        )

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    def frame_to_seconds(self, frame: int) -> float:
        return frame * self.frame_shift


@dataclass
class FeatureConfig:
    """Parameters for extract_features.

    num_filters defaults to 26 mel filters for MFCC and 17 Bark bands for
    PLP; these are conventional settings, the workflow does not depend on
    them.
    """

    kind: str = "mfcc"
    frame_length: float = 0.025
    frame_shift: float = 0.010
    num_coefficients: int = 13
    num_filters: int | None = None
    pre_emphasis: float = 0.97
    add_deltas: bool = False
    mvn: bool = False

    def __post_init__(self):
        if self.kind not in ("mfcc", "plp", "external"):
            raise FeatureError(f"unknown feature kind '{self.kind}'")
        if self.num_filters is None:
            self.num_filters = 26 if self.kind == "mfcc" else 17
        if self.num_coefficients > self.num_filters:
            raise FeatureError("num_coefficients must be <= num_filters")
        if not 0.0 <= self.pre_emphasis < 1.0:
            raise FeatureError("pre_emphasis must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "frame_length": self.frame_length,
            "frame_shift": self.frame_shift,
            "num_coefficients": self.num_coefficients,
            "num_filters": self.num_filters,
            "pre_emphasis": self.pre_emphasis,
            "add_deltas": self.add_deltas,
            "mvn": self.mvn,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FeatureConfig":
        return cls(**raw)


def _frame_signal(samples: np.ndarray, rate: int, frame_length: float, frame_shift: float) -> np.ndarray:
    """Slice the signal into overlapping frames; only full frames are kept."""
    frame_len = int(round(frame_length * rate))
    hop = int(round(frame_shift * rate))
    if len(samples) < frame_len:
        raise FeatureError(
            f"clip of {len(samples)} samples is shorter than one {frame_len}-sample frame"
        )
    n_frames = 1 + (len(samples) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return samples[idx]


def _power_spectrum(frames: np.ndarray) -> tuple[np.ndarray, int]:
    frame_len = frames.shape[1]
    nfft = 1
    while nfft < frame_len:
        nfft *= 2
    windowed = frames * np.hamming(frame_len)
    spec = np.fft.rfft(windowed, nfft)
    return (spec.real**2 + spec.imag**2) / nfft, nfft


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def _mel_filterbank(num_filters: int, nfft: int, rate: int) -> np.ndarray:
    """Triangular filters of unit height, equally spaced in mel from 0 Hz to Nyquist."""
    freqs = np.arange(nfft // 2 + 1) * rate / nfft
    edges = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(rate / 2.0), num_filters + 2))
    fbank = np.zeros((num_filters, len(freqs)))
    for i in range(num_filters):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fbank[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fbank


def _mfcc(samples: np.ndarray, rate: int, config: FeatureConfig) -> np.ndarray:
    if config.pre_emphasis > 0:
        samples = np.append(samples[0], samples[1:] - config.pre_emphasis * samples[:-1])
    frames = _frame_signal(samples, rate, config.frame_length, config.frame_shift)
    power, nfft = _power_spectrum(frames)
    fbank = _mel_filterbank(config.num_filters, nfft, rate)
    energies = np.log(np.maximum(power @ fbank.T, LOG_FLOOR))
    return dct(energies, type=2, norm="ortho", axis=1)[:, : config.num_coefficients]


def _hz_to_bark(f):
    return 6.0 * np.arcsinh(np.asarray(f) / 600.0)


def _bark_to_hz(z):
    return 600.0 * np.sinh(np.asarray(z) / 6.0)


def _bark_filterbank(num_bands: int, nfft: int, rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoidal critical-band filters equally spaced in Bark, plus center freqs.

    Skirts follow the classic critical-band shape: flat within +-0.5 Bark of
    the center, 10 dB/Bark rising below, 25 dB/Bark falling above.
    """
    bin_barks = _hz_to_bark(np.arange(nfft // 2 + 1) * rate / nfft)
    centers_bark = np.linspace(0.0, _hz_to_bark(rate / 2.0), num_bands)
    fbank = np.zeros((num_bands, len(bin_barks)))
    for i, c in enumerate(centers_bark):
        lof = bin_barks - c - 0.5
        hif = bin_barks - c + 0.5
        fbank[i] = 10.0 ** np.minimum(0.0, np.minimum(hif, -2.5 * lof))
    return fbank, _bark_to_hz(centers_bark)


def _equal_loudness(freqs_hz: np.ndarray) -> np.ndarray:
    # Hermansky's approximation of the 40-phon equal-loudness curve:
    # E(f) = (f^2/(f^2+1.6e5))^2 * (f^2+1.44e6)/(f^2+9.61e6)
    fsq = freqs_hz**2
    return (fsq / (fsq + 1.6e5)) ** 2 * ((fsq + 1.44e6) / (fsq + 9.61e6))


def _levinson(r: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Levinson-Durbin over a batch: r is (frames, order+1) autocorrelations.

    Returns AR coefficients a (frames, order+1) with a[:,0]=1 and the
    prediction error e (frames,), floored to keep the log-gain finite on
    degenerate (silent) frames.
    """
    n = r.shape[0]
    a = np.zeros((n, order + 1))
    a[:, 0] = 1.0
    e = np.maximum(r[:, 0].copy(), LOG_FLOOR)
    for i in range(1, order + 1):
        acc = r[:, i] + np.einsum("fj,fj->f", a[:, 1:i], r[:, i - 1 : 0 : -1])
        k = -acc / e
        a[:, 1 : i + 1] = a[:, 1 : i + 1] + k[:, None] * a[:, i - 1 :: -1][:, :i]
        e = np.maximum(e * (1.0 - k**2), LOG_FLOOR)
    return a, e


def _lpc_to_cepstrum(a: np.ndarray, e: np.ndarray, n_ceps: int) -> np.ndarray:
    """Standard recursion from an AR model (a[:,0] = 1, gain e) to cepstra.

    c0 is the log gain; c_n = -a_n - (1/n) sum_{k<n} k c_k a_{n-k}.
    """
    order = a.shape[1] - 1
    cep = np.zeros((a.shape[0], n_ceps))
    cep[:, 0] = np.log(e)
    for n in range(1, n_ceps):
        acc = np.zeros(a.shape[0])
        for k in range(1, n):
            if n - k <= order:
                acc += k * cep[:, k] * a[:, n - k]
        a_n = a[:, n] if n <= order else 0.0
        cep[:, n] = -(a_n + acc / n)
    return cep


def _plp(samples: np.ndarray, rate: int, config: FeatureConfig) -> np.ndarray:
    if config.num_filters < 14:
        raise FeatureError("PLP needs >= 14 Bark bands for the order-12 AR fit")
    frames = _frame_signal(samples, rate, config.frame_length, config.frame_shift)
    power, nfft = _power_spectrum(frames)
    fbank, centers_hz = _bark_filterbank(config.num_filters, nfft, rate)
    aud = (power @ fbank.T) * _equal_loudness(centers_hz)
    loud = np.maximum(aud, 0.0) ** (1.0 / 3.0)
    # edge bands carry no equal-loudness information (center at 0 Hz / Nyquist)
    loud[:, 0] = loud[:, 1]
    loud[:, -1] = loud[:, -2]
    # autocorrelation of the auditory spectrum via the inverse FFT of its
    # symmetric extension, then an order-12 AR fit
    sym = np.concatenate([loud, loud[:, -2:0:-1]], axis=1)
    r = np.fft.ifft(sym, axis=1).real[:, :13]
    a, e = _levinson(r, 12)
    return _lpc_to_cepstrum(a, e, config.num_coefficients)


def _regression_deltas(feat: np.ndarray, window: int = 2) -> np.ndarray:
    denom = 2 * sum(n * n for n in range(1, window + 1))
    padded = np.pad(feat, ((window, window), (0, 0)), mode="edge")
    out = np.zeros_like(feat)
    for n in range(1, window + 1):
        out += n * (padded[window + n : len(feat) + window + n] - padded[window - n : len(feat) + window - n])
    return out / denom


def extract_features(samples: np.ndarray, rate: int, config: FeatureConfig) -> FeatureMatrix:
    """Compute an MFCC or PLP matrix for one PCM clip.

    Frame count is 1 + floor((len - frame_length*rate) / (frame_shift*rate));
    partial trailing frames are dropped. With add_deltas, first- and
    second-order regression deltas (window +-2) are appended, tripling dims.

    Raises:
        FeatureError: clip shorter than one frame, or non-finite output
            (which signals a DSP bug and is never clamped here).
    """
    if config.kind == "external":
        raise FeatureError("external features are imported via SPTF1, not computed")
    samples = np.asarray(samples)
    if samples.ndim != 1:
        raise FeatureError("expected mono samples")
    if np.issubdtype(samples.dtype, np.integer):
        samples = samples / 32768.0
    samples = samples.astype(np.float64)
    feat = _mfcc(samples, rate, config) if config.kind == "mfcc" else _plp(samples, rate, config)
    if config.add_deltas:
        d = _regression_deltas(feat)
        feat = np.hstack([feat, d, _regression_deltas(d)])
    if not np.isfinite(feat).all():
        raise FeatureError("non-finite feature values: DSP bug")
    out = FeatureMatrix(feat, config.frame_shift, config.frame_length, kind=config.kind)
    if config.mvn:
        out = apply_mvn(out)
    return out


def apply_mvn(features: FeatureMatrix) -> FeatureMatrix:
    """Per-dimension mean subtraction and variance normalization.

    Constant dimensions map to zeros (std floored at 1e-10). The input is
    left unchanged.
    """
    data = features.data.astype(np.float64)
    mean = data.mean(axis=0)
    std = np.maximum(data.std(axis=0), STD_FLOOR)
    return FeatureMatrix(
        (data - mean) / std,
        features.frame_shift,
        features.frame_length,
        kind=features.kind,
        normalized=True,
    )


def extract_span(features: FeatureMatrix, start: float, end: float) -> FeatureMatrix:
    """Rows [floor(start/shift), ceil(end/shift)) clamped to the matrix bounds."""
    if not 0.0 <= start < end:
        raise FeatureError(f"bad span [{start}, {end}]")
    x0 = start / features.frame_shift
    x1 = end / features.frame_shift
    lo = max(0, int(np.floor(x0 + _index_eps(x0))))
    hi = min(features.frames, int(np.ceil(x1 - _index_eps(x1))))
    if hi <= lo:
        raise FeatureError(f"span [{start}, {end}] maps to zero frames")
    return FeatureMatrix(
        features.data[lo:hi],
        features.frame_shift,
        features.frame_length,
        kind=features.kind,
        normalized=features.normalized,
    )


MAGIC = b"SPTF1"
_HEADER = struct.Struct("<IIff")


def save_features(features: FeatureMatrix, path) -> None:
    """Write the SPTF1 container: magic, u32 rows, u32 dims, f32 frame_shift,
    f32 frame_length, then a row-major f32 payload (little-endian)."""
    path = Path(path)
    payload = np.ascontiguousarray(features.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(
            _HEADER.pack(
                features.frames,
                features.dims,
                np.float32(features.frame_shift),
                np.float32(features.frame_length),
            )
        )
        fh.write(payload.tobytes())


def load_external_features(path) -> FeatureMatrix:
    """Read an SPTF1 file; kind is always "external"."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise FeatureError(f"{path}: bad magic, not an SPTF1 file")
    offset = len(MAGIC)
    if len(blob) < offset + _HEADER.size:
        raise FeatureError(f"{path}: truncated header")
    rows, dims, frame_shift, frame_length = _HEADER.unpack_from(blob, offset)
    if rows == 0 or dims == 0:
        raise FeatureError(f"{path}: zero rows or dims in header")
    expected = rows * dims * 4
    payload = blob[offset + _HEADER.size :]
    if len(payload) < expected:
        raise FeatureError(f"{path}: truncated payload ({len(payload)} bytes, header implies {expected})")
    if len(payload) > expected:
        raise FeatureError(f"{path}: oversized payload ({len(payload)} bytes, header implies {expected})")
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, dims)
    if not np.isfinite(data).all():
        raise FeatureError(f"{path}: non-finite values in payload")
    return FeatureMatrix(data, frame_shift, frame_length, kind="external")
