"""Per-frame renormalized spectra.

The classifier input is built here: the signal is cut into 0.1 s frames,
each frame is Hann-windowed, zero-padded and FFT'd, the magnitudes are
resampled onto a uniform 1024-line grid over 0-2500 Hz, and finally each
frame is expressed in dB relative to its own maximum with everything
below -20 dB clamped to the floor. That last step erases the absolute
amplitude: scaling the input signal by any positive factor leaves the
frame unchanged.

To make the amplitude erasure hold bit-for-bit (not merely to rounding),
every non-zero window is first rescaled to unit peak and snapped to a
1/32768 grid -- the same resolution a 16-bit recording has anyway. Two
windows that differ only by a positive scale factor therefore quantize
to identical arrays before the FFT ever sees them.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import defaults
from .errors import BandExceedsNyquist, IoFailure, WindowTooShort
from .signal_io import TimeSignal

PEAK_QUANT_LEVELS = 32768
MIN_WINDOW_SAMPLES = 16

_TAPERS = ("hann", "rectangular")


@dataclass(frozen=True)
class SpectralConfig:
    """Framing and spectrum parameters. Defaults are the paper-pinned values."""

    hop_s: float = defaults.HOP_S
    window_s: float = defaults.WINDOW_S
    n_lines: int = defaults.N_LINES
    f_min_hz: float = defaults.F_MIN_HZ
    f_max_hz: float = defaults.F_MAX_HZ
    crop_db: float = defaults.CROP_DB
    taper: str = "hann"

    def __post_init__(self):
        if self.hop_s <= 0:
            raise ValueError("hop_s must be positive")
        if self.window_s <= 0:
            raise ValueError("window_s must be positive")
        if self.n_lines < 2:
            raise ValueError("n_lines must be at least 2")
        if not self.f_min_hz < self.f_max_hz:
            raise ValueError("f_min_hz must be below f_max_hz")
        if self.crop_db <= 0:
            raise ValueError("crop_db must be positive")
        if self.taper not in _TAPERS:
            raise ValueError(f"taper must be one of {_TAPERS}")

    def grid_hz(self) -> np.ndarray:
        """The uniform frequency grid: line 0 at f_min, line n_lines-1 at f_max."""
        return self.f_min_hz + np.arange(self.n_lines) * (
            (self.f_max_hz - self.f_min_hz) / (self.n_lines - 1)
        )


@dataclass(frozen=True, eq=False)
class SpectralFrame:
    """One frame's renormalized spectrum: n_lines dB values in [-crop_db, 0]."""

    frame_index: int
    t_start_s: float
    lines: np.ndarray  # float32

    def __eq__(self, other):
        if not isinstance(other, SpectralFrame):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and self.t_start_s == other.t_start_s
            and np.array_equal(self.lines, other.lines)
        )


def frame_counts(n_samples: int, sample_rate_hz: float, config: SpectralConfig):
    """(hop, window) in samples for this rate, plus how many frames fit."""
    hop_n = int(round(config.hop_s * sample_rate_hz))
    window_n = int(round(config.window_s * sample_rate_hz))
    if window_n < MIN_WINDOW_SAMPLES:
        raise WindowTooShort(
            f"window of {window_n} samples is below the {MIN_WINDOW_SAMPLES}-sample minimum"
        )
    if hop_n < 1:
        raise ValueError("hop rounds to zero samples")
    n_frames = (n_samples - window_n) // hop_n + 1 if n_samples >= window_n else 0
    return hop_n, window_n, n_frames


def frame_signal(signal: TimeSignal, config: SpectralConfig = SpectralConfig()):
    """Cut the signal into (frame_index, window) pairs.

    Frame k covers samples [k*hop_n, k*hop_n + window_n); trailing samples
    that do not fill a whole window are dropped.
    """
    hop_n, window_n, n_frames = frame_counts(
        signal.samples.size, signal.sample_rate_hz, config
    )
    return [
        (k, signal.samples[k * hop_n : k * hop_n + window_n]) for k in range(n_frames)
    ]


@lru_cache(maxsize=8)
def _taper_window(n: int, kind: str) -> np.ndarray:
    if kind == "hann":
        return np.hanning(n)
    return np.ones(n)


def _canonical_window(window: np.ndarray) -> np.ndarray:
    """Rescale to unit peak and snap to the 1/32768 grid (identity for zeros).

    This is what makes the downstream frames exactly scale-invariant:
    scaled copies of a window land on the same quantized array.
    """
    x = np.asarray(window, dtype=np.float64)
    peak = np.max(np.abs(x))
    if peak == 0.0:
        return np.zeros_like(x)
    return np.rint(x * (PEAK_QUANT_LEVELS / peak)) / PEAK_QUANT_LEVELS


def _n_fft(window_n: int, sample_rate_hz: float, config: SpectralConfig) -> int:
    # Smallest power of two whose raw bin spacing is at most the output
    # grid spacing, so the grid resampling never skips a bin.
    grid_df = (config.f_max_hz - config.f_min_hz) / (config.n_lines - 1)
    need = max(window_n, int(np.ceil(sample_rate_hz / grid_df)))
    return 1 << int(need - 1).bit_length()


def prepare_window(
    window: np.ndarray, sample_rate_hz: float, config: SpectralConfig = SpectralConfig()
) -> np.ndarray:
    """The exact array the FFT runs on: canonicalized, tapered, zero-padded."""
    x = _canonical_window(window)
    x = x * _taper_window(x.size, config.taper)
    n_fft = _n_fft(x.size, sample_rate_hz, config)
    if n_fft > x.size:
        x = np.concatenate([x, np.zeros(n_fft - x.size)])
    return x


def complex_spectrum(
    window: np.ndarray, sample_rate_hz: float, config: SpectralConfig = SpectralConfig()
):
    """Full complex FFT of the prepared window, with its frequency axis.

    Exposed for verification (Parseval checks and the like); the pipeline
    itself uses the one-sided transform in magnitude_spectrum.
    """
    x = prepare_window(window, sample_rate_hz, config)
    freqs = np.fft.fftfreq(x.size, d=1.0 / sample_rate_hz)
    return freqs, np.fft.fft(x)


def magnitude_spectrum(
    window: np.ndarray, sample_rate_hz: float, config: SpectralConfig = SpectralConfig()
) -> np.ndarray:
    """FFT magnitudes linearly interpolated onto the n_lines grid."""
    if config.f_max_hz > sample_rate_hz / 2:
        raise BandExceedsNyquist(
            f"f_max {config.f_max_hz:g} Hz exceeds Nyquist {sample_rate_hz / 2:g} Hz"
        )
    window = np.asarray(window, dtype=np.float64)
    if window.size == 0:
        raise ValueError("window must be non-empty")
    x = prepare_window(window, sample_rate_hz, config)
    mags = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(x.size, d=1.0 / sample_rate_hz)
    return np.interp(config.grid_hz(), freqs, mags)


def renormalize(
    magnitudes: np.ndarray, config: SpectralConfig = SpectralConfig()
) -> np.ndarray:
    """Express magnitudes in dB relative to their maximum, floored at -crop_db.

    Zero magnitudes map to the floor; an all-zero input maps to a uniform
    floor frame. For any other input the maximum line is exactly 0 dB.
    Scaling all magnitudes by a positive constant leaves the result
    unchanged -- this is the amplitude erasure.
    """
    m = np.asarray(magnitudes, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("magnitudes must be non-negative")
    floor = -config.crop_db
    peak = m.max() if m.size else 0.0
    if peak == 0.0:
        return np.full(m.shape, np.float32(floor), dtype=np.float32)
    lines = np.full(m.shape, floor)
    pos = m > 0
    lines[pos] = np.maximum(20.0 * np.log10(m[pos] / peak), floor)
    return lines.astype(np.float32)


def frame_lines_valid(lines: np.ndarray, crop_db: float) -> bool:
    """Range/maximum invariant used when validating persisted frames."""
    floor = np.float32(-crop_db)
    if lines.min() < floor or lines.max() > np.float32(0.0):
        return False
    return lines.max() == np.float32(0.0) or bool(np.all(lines == floor))


def extract_frames(
    signal: TimeSignal, config: SpectralConfig = SpectralConfig()
) -> list[SpectralFrame]:
    """Run the whole per-frame pipeline over a signal."""
    hop_n, _, _ = frame_counts(signal.samples.size, signal.sample_rate_hz, config)
    out = []
    for k, window in frame_signal(signal, config):
        mags = magnitude_spectrum(window, signal.sample_rate_hz, config)
        out.append(
            SpectralFrame(
                frame_index=k,
                t_start_s=k * hop_n / signal.sample_rate_hz,
                lines=renormalize(mags, config),
            )
        )
    return out


PGM_HEIGHT = 64


def export_frame_pgm(
    frame: SpectralFrame, path, config: SpectralConfig = SpectralConfig()
) -> None:
    """Render a frame as a binary PGM: column j filled bottom-up with white
    to a height proportional to (line_j + crop_db) / crop_db."""
    crop = config.crop_db
    heights = np.rint(
        PGM_HEIGHT * (frame.lines.astype(np.float64) + crop) / crop
    ).astype(int)
    heights = np.clip(heights, 0, PGM_HEIGHT)
    rows = np.arange(PGM_HEIGHT)[:, None]  # row 0 is the top of the image
    img = np.where(rows >= PGM_HEIGHT - heights[None, :], 255, 0).astype(np.uint8)
    header = f"P5\n{frame.lines.size} {PGM_HEIGHT}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + img.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
