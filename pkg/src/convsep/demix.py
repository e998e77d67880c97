"""Time-domain application of the learned MIMO FIR system and the
sphering + separation pipeline built on top of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ParameterError
from .iva import ConvergenceTrace, IvaConfig, run_iva
from .signal import TimeSeries, highpass_dc_removal
from .spectral import DemixFilterBank, WINDOW_IDS, center, stft
from .sphering import (
    DEFAULT_EIGENVALUE_FLOOR,
    SpheringTransform,
    apply_sphering,
    compute_sphering,
    estimate_spatial_covariance,
)

__all__ = [
    "PipelineConfig",
    "PipelineResult",
    "apply_mimo_fir",
    "demix_pipeline",
    "absorb_sphering",
]


def _is_power_of_two(m: int) -> bool:
    return m >= 1 and (m & (m - 1)) == 0


@dataclass(frozen=True)
class PipelineConfig:
    """Everything demix_pipeline needs: framing, preprocessing, and the
    separation settings.

    hop=None means one filter length per hop. dc_cutoff_hz=None skips the
    highpass stage (the cutoff has no principled default here).
    """

    filter_length: int = 64
    window_id: str = "zeropad"
    hop: int | None = None
    dc_cutoff_hz: float | None = None
    sphering: bool = True
    eigenvalue_floor: float = DEFAULT_EIGENVALUE_FLOOR
    iva: IvaConfig = field(default_factory=IvaConfig)

    def __post_init__(self):
        if not _is_power_of_two(self.filter_length):
            raise ParameterError(
                f"filter length must be a power of two, got {self.filter_length}"
            )
        if self.window_id not in WINDOW_IDS:
            raise ParameterError(f"unknown window {self.window_id!r}")
        if self.hop is not None and not 1 <= self.hop <= 2 * self.filter_length:
            raise ParameterError(f"hop must be in [1, {2 * self.filter_length}], got {self.hop}")
        if self.dc_cutoff_hz is not None and not self.dc_cutoff_hz > 0:
            raise ParameterError(f"dc_cutoff_hz must be positive, got {self.dc_cutoff_hz}")
        if not self.eigenvalue_floor > 0:
            raise ParameterError(f"eigenvalue_floor must be positive, got {self.eigenvalue_floor}")

    @property
    def n_bins(self) -> int:
        return 2 * self.filter_length

    @property
    def effective_hop(self) -> int:
        return self.filter_length if self.hop is None else self.hop


class PipelineResult(NamedTuple):
    separated: TimeSeries
    bank: DemixFilterBank
    sphering: SpheringTransform
    trace: ConvergenceTrace


def apply_mimo_fir(bank: DemixFilterBank, ts: TimeSeries) -> TimeSeries:
    """y_q(n) = sum_p sum_k w[q,p,k] x_p(n-k), zero initial state.

    Output length equals input length.
    """
    if bank.n_channels != ts.n_channels:
        raise ParameterError(
            f"bank has {bank.n_channels} channels, signal has {ts.n_channels}"
        )
    n = ts.n_samples
    out = np.zeros((bank.n_channels, n))
    for q in range(bank.n_channels):
        for p in range(ts.n_channels):
            out[q] += np.convolve(ts.data[p], bank.coeffs[q, p])[:n]
    return ts.with_data(out)


def demix_pipeline(ts: TimeSeries, cfg: PipelineConfig) -> PipelineResult:
    """DC removal, sphering, STFT + centering, separation, then the learned
    FIR bank applied to the sphered time-domain signal."""
    prepared = ts
    if cfg.dc_cutoff_hz is not None:
        prepared = highpass_dc_removal(prepared, cfg.dc_cutoff_hz)
    if cfg.sphering:
        transform = compute_sphering(
            estimate_spatial_covariance(prepared), cfg.eigenvalue_floor
        )
    else:
        transform = SpheringTransform.identity(prepared.n_channels)
    sphered = apply_sphering(transform, prepared)

    frames = center(stft(sphered, cfg.n_bins, cfg.effective_hop, cfg.window_id))
    bank, trace = run_iva(frames, cfg.iva)
    separated = apply_mimo_fir(bank, sphered)
    return PipelineResult(separated, bank, transform, trace)


def absorb_sphering(bank: DemixFilterBank, transform: SpheringTransform) -> DemixFilterBank:
    """Fold the instantaneous sphering matrix into the FIR bank, giving the
    equivalent sensor-to-output system: w'[q,:,k] = w[q,:,k] @ T."""
    if bank.n_channels != transform.n_channels:
        raise ParameterError(
            f"bank has {bank.n_channels} channels, transform has {transform.n_channels}"
        )
    combined = np.einsum("qrk,rp->qpk", bank.coeffs, transform.matrix)
    return DemixFilterBank(combined)
