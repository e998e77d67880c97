"""Frequency-domain separation loop with broadband bin coupling.

Per iteration: per-bin circular convolution of the frames, broadband
normalization factors across all bins, the multivariate score, a
natural-gradient coefficient update, and the minimum distortion
rescaling. Bins are tied together only through the normalization, which
is what sidesteps the narrowband permutation ambiguity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalDivergenceError, ParameterError, SingularFilterError
from .spectral import (
    DemixFilterBank,
    FrequencyFilterBank,
    SpectralFrames,
    filters_to_time,
    truncation_diagnostics,
)

__all__ = [
    "IvaConfig",
    "IterationState",
    "ConvergenceTrace",
    "forward_pass",
    "broadband_norms",
    "score",
    "update_step",
    "minimum_distortion",
    "run_iva",
    "write_trace_csv",
]

# condition-number ceiling for the per-bin inversion in minimum_distortion;
# transient ill-conditioning during iteration self-corrects, so the guard
# only rejects matrices whose inverse is numerically meaningless
_MAX_CONDITION = 1e14


@dataclass(frozen=True)
class IvaConfig:
    """Step size, iteration budget, stopping rule, and score guard.

    convergence_tol is relative: the loop stops once the mean update norm
    falls below convergence_tol times its first-iteration value.
    norm_guard=None resolves to 1e-12 times the RMS of the current
    outputs, which keeps the score scale-invariant.
    """

    step_size: float = 0.003
    max_iterations: int = 200
    convergence_tol: float = 1e-6
    norm_guard: float | None = None

    def __post_init__(self):
        if not 0 <= self.step_size <= 1:
            raise ParameterError(f"step_size must be in [0, 1], got {self.step_size}")
        if self.max_iterations < 1:
            raise ParameterError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.convergence_tol < 0:
            raise ParameterError(f"convergence_tol must be >= 0, got {self.convergence_tol}")
        if self.norm_guard is not None and not self.norm_guard > 0:
            raise ParameterError(f"norm_guard must be positive, got {self.norm_guard}")


@dataclass
class IterationState:
    """One iteration's working set: filters, outputs, norms, and the trace so far."""

    filters: FrequencyFilterBank
    outputs: SpectralFrames
    norms: np.ndarray
    update_norm_trace: list = field(default_factory=list)

    @property
    def iteration(self) -> int:
        return len(self.update_norm_trace) + 1


@dataclass
class ConvergenceTrace:
    """Per-iteration update norms plus the end-of-run diagnostics."""

    mean_update_norm: list
    max_update_norm: list
    converged: bool
    iterations: int
    discarded_lag_energy: float = 0.0
    discarded_imag_energy: float = 0.0


def _resolve_guard(cfg: IvaConfig, outputs: np.ndarray) -> float:
    if cfg.norm_guard is not None:
        return cfg.norm_guard
    with np.errstate(over="ignore"):
        rms = float(np.sqrt(np.mean(np.abs(outputs) ** 2)))
    return max(1e-12 * rms, np.finfo(float).tiny)


def forward_pass(fb: FrequencyFilterBank, frames: SpectralFrames) -> SpectralFrames:
    """Per bin and block, Y = W X."""
    if fb.n_channels != frames.n_channels or fb.n_bins != frames.n_bins:
        raise ParameterError(
            f"bank is {fb.n_bins} bins x {fb.n_channels} channels, "
            f"frames are {frames.n_bins} x {frames.n_channels}"
        )
    x = frames.data.transpose(2, 0, 1)  # (bins, channels, blocks)
    y = fb.response @ x
    return frames.with_data(y.transpose(1, 2, 0))


def broadband_norms(outputs: SpectralFrames) -> np.ndarray:
    """b[m, p] = sqrt of the mean squared magnitude across all bins."""
    with np.errstate(over="ignore"):
        power = np.mean(np.abs(outputs.data) ** 2, axis=2)  # (channels, blocks)
    return np.sqrt(power).T


def score(outputs: SpectralFrames, norms: np.ndarray, guard: float) -> SpectralFrames:
    """Multivariate score: each bin divided by its block's broadband norm."""
    norms = np.asarray(norms, dtype=np.float64)
    if norms.shape != (outputs.n_blocks, outputs.n_channels):
        raise ParameterError(
            f"norms shape {norms.shape} does not match (blocks, channels) "
            f"({outputs.n_blocks}, {outputs.n_channels})"
        )
    if np.any(norms < 0):
        raise ParameterError("broadband norms must be non-negative")
    denom = norms.T[:, :, None] + guard  # (channels, blocks, 1)
    return outputs.with_data(outputs.data / denom)


def _bracket(phi: np.ndarray, outputs: np.ndarray) -> np.ndarray:
    """G = I - (1/N) sum_m Phi(m) Y(m)^H per bin, blocks summed in ascending order."""
    n_blocks = phi.shape[2]
    cross = np.einsum("vqn,vpn->vqp", phi, np.conj(outputs), optimize=False) / n_blocks
    eye = np.eye(phi.shape[1], dtype=np.complex128)
    return eye[None, :, :] - cross


def update_step(state: IterationState, cfg: IvaConfig) -> tuple[FrequencyFilterBank, float, float]:
    """Natural-gradient update W <- W + mu [I - mean(Phi Y^H)] W.

    Returns the new bank plus the mean and max Frobenius norm of the
    bracketed term over bins (the convergence-trace entries).
    """
    y = state.outputs.data.transpose(2, 0, 1)  # (bins, channels, blocks)
    guard = _resolve_guard(cfg, y)
    with np.errstate(over="ignore", invalid="ignore"):
        phi = score(state.outputs, state.norms, guard).data.transpose(2, 0, 1)
        bracket = _bracket(phi, y)
        norms = np.linalg.norm(bracket, axis=(1, 2))
        new_response = state.filters.response + cfg.step_size * (bracket @ state.filters.response)
    if not np.all(np.isfinite(new_response)):
        bad = ~np.all(np.isfinite(new_response).reshape(new_response.shape[0], -1), axis=1)
        raise NumericalDivergenceError(state.iteration, int(np.argmax(bad)))
    return FrequencyFilterBank(new_response), float(norms.mean()), float(norms.max())


def minimum_distortion(fb: FrequencyFilterBank) -> FrequencyFilterBank:
    """Rescale per bin: W <- diag{W^-1} W.

    Raises SingularFilterError, naming the bin, when some W is singular or
    its condition estimate exceeds 1e12.
    """
    response = fb.response
    with np.errstate(all="ignore"):
        try:
            inverse = np.linalg.inv(response)
        except np.linalg.LinAlgError:
            dets = np.abs(np.linalg.det(response))
            return _raise_singular(int(np.argmin(dets)))
    finite = np.all(np.isfinite(inverse).reshape(inverse.shape[0], -1), axis=1)
    if not np.all(finite):
        return _raise_singular(int(np.argmax(~finite)))
    cond = np.linalg.norm(response, axis=(1, 2)) * np.linalg.norm(inverse, axis=(1, 2))
    if np.any(cond > _MAX_CONDITION):
        return _raise_singular(int(np.argmax(cond)))
    diag = np.einsum("vqq->vq", inverse)
    return FrequencyFilterBank(diag[:, :, None] * response)


def _raise_singular(bin_index: int):
    raise SingularFilterError(bin_index)


def run_iva(frames: SpectralFrames, cfg: IvaConfig) -> tuple[DemixFilterBank, ConvergenceTrace]:
    """Iterate the separation loop from the identity bank and return the
    causal time-domain bank plus the convergence trace.

    Expects centered frames with an even power-of-two bin count M = 2L and
    at least two blocks.
    """
    n_bins = frames.n_bins
    if n_bins % 2 != 0:
        raise ParameterError(f"bin count must be even (M = 2L), got {n_bins}")
    if frames.n_blocks < 2:
        raise ParameterError("separation needs at least two blocks")
    filter_length = n_bins // 2

    bank = FrequencyFilterBank.identity(n_bins, frames.n_channels)
    mean_trace: list[float] = []
    max_trace: list[float] = []
    converged = False
    state = IterationState(bank, frames, broadband_norms(frames), mean_trace)
    for _ in range(cfg.max_iterations):
        try:
            bank, mean_norm, max_norm = update_step(state, cfg)
            bank = minimum_distortion(bank)
        except SingularFilterError as exc:
            raise NumericalDivergenceError(
                state.iteration,
                exc.bin_index,
                f"separation update became singular at iteration {state.iteration}, "
                f"frequency bin {exc.bin_index}",
            ) from exc
        mean_trace.append(mean_norm)
        max_trace.append(max_norm)
        if mean_norm <= cfg.convergence_tol * mean_trace[0]:
            converged = True
            break
        outputs = forward_pass(bank, frames)
        state = IterationState(bank, outputs, broadband_norms(outputs), mean_trace)

    diag = truncation_diagnostics(bank, filter_length)
    trace = ConvergenceTrace(
        mean_update_norm=mean_trace,
        max_update_norm=max_trace,
        converged=converged,
        iterations=len(mean_trace),
        discarded_lag_energy=diag.late_lag_energy,
        discarded_imag_energy=diag.imaginary_energy,
    )
    return filters_to_time(bank, filter_length), trace


def write_trace_csv(trace: ConvergenceTrace, path) -> None:
    """CSV with columns iteration, mean_update_norm, max_update_norm."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "mean_update_norm", "max_update_norm"])
        for i, (mean_norm, max_norm) in enumerate(
            zip(trace.mean_update_norm, trace.max_update_norm), start=1
        ):
            writer.writerow([i, repr(mean_norm), repr(max_norm)])
