"""
Heart rate from BVP via a windowed spectral peak, MAE, and per-domain summary statistics.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.fft import rfft, rfftfreq
from scipy.signal import get_window

from .exceptions import AlignmentError, CiUndefinedError, LengthError
from .stats import ci95
from .utils import format_ci

logger = logging.getLogger(__name__)

HR_BAND_BPM = (40.0, 180.0)
WINDOW_S = 10.0
HOP_S = 1.0
PAD_FACTOR = 4
# in-band peak magnitude below this means there is no pulse to speak of
LOW_CONFIDENCE_PEAK = 1e-9


@dataclass(frozen=True)
class BvpSeries:
    fps: float
    samples: np.ndarray
    subject_id: str = ''

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")
        object.__setattr__(self, 'samples', np.asarray(self.samples, dtype=np.float64))


@dataclass(frozen=True)
class HrSeries:
    times_s: np.ndarray
    hr_bpm: np.ndarray
    peak_magnitude: np.ndarray = None
    subject_id: str = ''

    @property
    def low_confidence(self) -> np.ndarray:
        if self.peak_magnitude is None:
            return np.zeros(len(self.hr_bpm), dtype=bool)
        return self.peak_magnitude < LOW_CONFIDENCE_PEAK

    def __len__(self):
        return len(self.hr_bpm)


def bin_width_bpm(fps: float, window_s: float = WINDOW_S, pad_factor: int = PAD_FACTOR) -> float:
    """Spectral resolution of stft_hr in BPM"""
    return 60.0 * fps / (pad_factor * int(round(window_s * fps)))


def stft_hr(bvp: BvpSeries, window_s: float = WINDOW_S, hop_s: float = HOP_S,
            pad_factor: int = PAD_FACTOR) -> HrSeries:
    """
    Windowed spectral-peak heart rate

    Each window is mean-removed, Hann-weighted and zero-padded to pad_factor
    times its length; HR is 60 x the frequency of the largest magnitude inside
    the 40-180 BPM band. Timestamps are window centers.

    Raises:
        LengthError: series shorter than one window
    """
    fps = bvp.fps
    window = int(round(window_s * fps))
    hop = max(1, int(round(hop_s * fps)))
    samples = bvp.samples
    if window < 2 or len(samples) < window:
        raise LengthError(
            f"BVP series {bvp.subject_id!r} has {len(samples)} samples; "
            f"a {window_s}s window at {fps} fps needs at least {window}", required=window)

    nfft = pad_factor * window
    taper = get_window('hann', window)
    freqs_bpm = 60.0 * rfftfreq(nfft, d=1.0 / fps)
    band = (freqs_bpm >= HR_BAND_BPM[0]) & (freqs_bpm <= HR_BAND_BPM[1])
    band_bpm = freqs_bpm[band]

    starts = np.arange(0, len(samples) - window + 1, hop)
    segments = np.stack([samples[s:s + window] for s in starts])
    segments = segments - segments.mean(axis=1, keepdims=True)
    spectrum = np.abs(rfft(segments * taper, n=nfft, axis=1))[:, band]

    peaks = np.argmax(spectrum, axis=1)
    peak_magnitude = spectrum[np.arange(len(starts)), peaks]
    low = peak_magnitude < LOW_CONFIDENCE_PEAK
    if low.any():
        logger.warning(f"{int(low.sum())}/{len(starts)} windows of {bvp.subject_id!r} have no in-band peak")

    return HrSeries(
        times_s=(starts + window / 2.0) / fps,
        hr_bpm=band_bpm[peaks],
        peak_magnitude=peak_magnitude,
        subject_id=bvp.subject_id,
    )


def mae(pred: HrSeries, truth: HrSeries) -> float:
    """Mean absolute HR error in BPM over aligned windows"""
    if len(pred) != len(truth) or not np.allclose(pred.times_s, truth.times_s, rtol=0.0, atol=1e-9):
        raise AlignmentError(f"HR series are not aligned ({len(pred)} vs {len(truth)} windows)")
    if len(pred) == 0:
        raise AlignmentError("Empty HR series")
    return float(np.mean(np.abs(np.asarray(pred.hr_bpm) - np.asarray(truth.hr_bpm))))


def pooled_mae(pairs: Iterable[Tuple[HrSeries, HrSeries]]) -> float:
    """MAE over the concatenated windows of several clips"""
    errors = []
    for pred, truth in pairs:
        mae(pred, truth)  # alignment check
        errors.append(np.abs(np.asarray(pred.hr_bpm) - np.asarray(truth.hr_bpm)))
    if not errors:
        raise AlignmentError("No clips to score")
    return float(np.mean(np.concatenate(errors)))


# --- summary statistics ---

SUMMARY_COLUMNS = ('Time (s)', 'Avg HR (BPM)', 'Avg HR stddev (BPM)')


@dataclass(frozen=True)
class SummaryStats:
    """Per-clip means with 95% CI halfwidths across clips (NaN when undefined)"""
    clips: int
    time_s: Tuple[float, float]
    avg_hr: Tuple[float, float]
    hr_stddev: Tuple[float, float]

    def formatted(self) -> List[str]:
        return [format_ci(*self.time_s), format_ci(*self.avg_hr), format_ci(*self.hr_stddev)]


def summary_stats(hr_clips: Sequence[np.ndarray], fps: float) -> SummaryStats:
    """
    Summary statistics from per-frame ground-truth HR clips

    Raises:
        CiUndefinedError: fewer than two clips; the means are attached as `summary`
    """
    clips = [np.asarray(c, dtype=np.float64) for c in hr_clips]
    if not clips:
        raise CiUndefinedError("No clips to summarize")
    times = np.array([len(c) / fps for c in clips])
    means = np.array([c.mean() for c in clips])
    stddevs = np.array([c.std() for c in clips])

    if len(clips) < 2:
        partial = SummaryStats(1, (times[0], np.nan), (means[0], np.nan), (stddevs[0], np.nan))
        raise CiUndefinedError("95% CI needs at least two clips", summary=partial)

    return SummaryStats(len(clips), ci95(times), ci95(means), ci95(stddevs))


def dataset_summary(dataset) -> SummaryStats:
    """summary_stats over a SyntheticDataset's ground truth"""
    return summary_stats([r.hr_bpm for r in dataset.subjects], dataset.fps)
