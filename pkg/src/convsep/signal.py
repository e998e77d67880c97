"""Multichannel time-domain signals and raw file I/O.

Signals are stored channel-major in memory as float64 and interleaved
little-endian float32 on disk (one frame = one sample of all channels),
described by a small JSON header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import DataError, FormatError, ParameterError

__all__ = [
    "SignalMetadata",
    "TimeSeries",
    "read_raw",
    "write_raw",
    "highpass_dc_removal",
]


@dataclass(frozen=True)
class SignalMetadata:
    """Sampling interval in seconds plus one text label per channel."""

    sample_interval_s: float
    channel_labels: tuple[str, ...]

    def __post_init__(self):
        if not self.sample_interval_s > 0:
            raise ParameterError(
                f"sample_interval_s must be positive, got {self.sample_interval_s}"
            )
        object.__setattr__(self, "channel_labels", tuple(self.channel_labels))

    @property
    def sample_rate_hz(self) -> float:
        return 1.0 / self.sample_interval_s


@dataclass(frozen=True)
class TimeSeries:
    """Immutable (channels, samples) float64 signal with metadata."""

    data: np.ndarray
    meta: SignalMetadata

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ParameterError(f"data must be 2-D (channels, samples), got ndim={arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ParameterError(f"need at least one channel and one sample, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("signal contains non-finite values")
        if len(self.meta.channel_labels) != arr.shape[0]:
            raise ParameterError(
                f"{len(self.meta.channel_labels)} labels for {arr.shape[0]} channels"
            )
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples * self.meta.sample_interval_s

    def with_data(self, data: np.ndarray) -> "TimeSeries":
        """Same metadata, new sample values (channel count must match)."""
        return TimeSeries(data, self.meta)


def default_labels(n_channels: int) -> tuple[str, ...]:
    return tuple(f"ch{p + 1}" for p in range(n_channels))


def read_raw(path, header) -> TimeSeries:
    """Read an interleaved little-endian float32 file described by a JSON header.

    The payload length must equal channels * samples * 4 bytes; values are
    widened to float64.
    """
    try:
        with open(header, "r", encoding="utf-8") as fh:
            desc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read signal header {header}: {exc}") from exc
    try:
        channels = int(desc["channels"])
        samples = int(desc["samples"])
        interval = float(desc["sample_interval_s"])
        labels = [str(x) for x in desc["labels"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed signal header {header}: {exc}") from exc
    if channels < 1 or samples < 1:
        raise FormatError(
            f"header declares channels={channels}, samples={samples}; both must be >= 1"
        )
    if len(labels) != channels:
        raise FormatError(f"header has {len(labels)} labels for {channels} channels")

    payload = np.fromfile(path, dtype="<f4")
    expected = channels * samples
    if payload.size != expected:
        raise FormatError(
            f"{path}: payload holds {payload.size} float32 values, "
            f"header requires {expected} ({channels} channels x {samples} samples)"
        )
    data = payload.astype(np.float64).reshape(samples, channels).T
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: payload contains non-finite values")
    return TimeSeries(data, SignalMetadata(interval, tuple(labels)))


def write_raw(ts: TimeSeries, path, header) -> None:
    """Write the signal as interleaved little-endian float32 plus a JSON header."""
    frames = np.ascontiguousarray(ts.data.T, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(frames.tobytes())
    desc = {
        "channels": ts.n_channels,
        "samples": ts.n_samples,
        "sample_interval_s": ts.meta.sample_interval_s,
        "labels": list(ts.meta.channel_labels),
    }
    with open(header, "w", encoding="utf-8") as fh:
        json.dump(desc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def highpass_dc_removal(ts: TimeSeries, cutoff_hz: float) -> TimeSeries:
    """First-order highpass per channel, zero initial state.

    One pole at a = exp(-2*pi*fc*Ta) with the zero at DC; the gain is
    normalized so the response at Nyquist is exactly one.
    """
    nyquist = 0.5 / ts.meta.sample_interval_s
    if not 0 < cutoff_hz < nyquist:
        raise ParameterError(
            f"cutoff {cutoff_hz} Hz outside (0, {nyquist}) Hz"
        )
    a = np.exp(-2.0 * np.pi * cutoff_hz * ts.meta.sample_interval_s)
    g = 0.5 * (1.0 + a)
    filtered = lfilter([g, -g], [1.0, -a], ts.data, axis=1)
    return ts.with_data(filtered)
