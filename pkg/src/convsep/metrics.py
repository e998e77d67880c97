"""Ground-truth separation quality: permutation-aligned SIR/SDR and the
instantaneous-vs-convolutive comparison.

All metrics work on per-source sensor images from the simulator, passed
through the same preprocessing and demixing as the mixture; by linearity
the per-output contributions sum to the pipeline output.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .demix import PipelineConfig, PipelineResult, apply_mimo_fir, demix_pipeline
from .errors import ParameterError, UndefinedSirError
from .iva import ConvergenceTrace
from .signal import TimeSeries, highpass_dc_removal
from .simulate import SimScenario, Simulation, build_scenario
from .spectral import DemixFilterBank
from .sphering import SpheringTransform, apply_sphering

__all__ = [
    "DB_CAP",
    "MAX_ASSIGNMENT_CHANNELS",
    "SeparationReport",
    "project_images",
    "sir",
    "sdr",
    "input_sir",
    "evaluate_separation",
    "compare_instantaneous",
    "physical_path_length",
    "moving_rms",
    "write_envelopes_csv",
]

DB_CAP = 100.0
MAX_ASSIGNMENT_CHANNELS = 6


def _db_ratio(num: float, den: float) -> float:
    """10 log10(num/den), capped to +-DB_CAP, with zero handling."""
    if num <= 0.0 and den <= 0.0:
        raise UndefinedSirError("both signal and interference power are zero")
    if num <= 0.0:
        return -DB_CAP
    if den <= 0.0:
        return DB_CAP
    return float(np.clip(10.0 * math.log10(num / den), -DB_CAP, DB_CAP))


@dataclass(frozen=True)
class SeparationReport:
    """Permutation assignment plus per-output quality figures in dB."""

    assignment: tuple[int, ...]
    sir_db: tuple[float, ...]
    sdr_db: tuple[float, ...]
    sir_improvement_db: tuple[float, ...]
    input_sir_db: tuple[float, ...]
    convergence: dict | None = None

    def __post_init__(self):
        n = len(self.assignment)
        if sorted(self.assignment) != list(range(n)):
            raise ParameterError(f"assignment {self.assignment} is not a permutation")
        for name in ("sir_db", "sdr_db", "sir_improvement_db", "input_sir_db"):
            vals = getattr(self, name)
            if len(vals) != n:
                raise ParameterError(f"{name} must have {n} entries")
            object.__setattr__(self, name, tuple(float(v) for v in vals))
        object.__setattr__(self, "assignment", tuple(int(a) for a in self.assignment))

    def to_dict(self) -> dict:
        return {
            "assignment": list(self.assignment),
            "sir_db": list(self.sir_db),
            "sdr_db": list(self.sdr_db),
            "sir_improvement_db": list(self.sir_improvement_db),
            "input_sir_db": list(self.input_sir_db),
            "convergence": self.convergence,
        }


def project_images(
    bank: DemixFilterBank,
    sphering: SpheringTransform,
    images: list,
    dc_cutoff_hz: float | None = None,
) -> np.ndarray:
    """Pass each source's sensor image through the fitted chain.

    Returns contributions[q, j] = what source q contributes to output j;
    their sum over q equals the pipeline output by linearity.
    """
    if not images:
        raise ParameterError("need at least one source image")
    out = []
    for img in images:
        if img.n_channels != bank.n_channels:
            raise ParameterError(
                f"image has {img.n_channels} channels, bank expects {bank.n_channels}"
            )
        if dc_cutoff_hz is not None:
            img = highpass_dc_removal(img, dc_cutoff_hz)
        out.append(apply_mimo_fir(bank, apply_sphering(sphering, img)).data)
    return np.stack(out)


def sir(contributions: np.ndarray, transient: int = 0) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Best output-to-source assignment and per-output SIR in dB.

    The assignment is an exhaustive search over all permutations (channel
    count capped at 6) maximizing the total capped SIR; power excludes the
    first `transient` samples.
    """
    contributions = np.asarray(contributions, dtype=np.float64)
    if contributions.ndim != 3 or contributions.shape[0] != contributions.shape[1]:
        raise ParameterError(f"contributions must be (sources, outputs, samples), got {contributions.shape}")
    n_src = contributions.shape[0]
    if n_src > MAX_ASSIGNMENT_CHANNELS:
        raise ParameterError(f"assignment search supports at most {MAX_ASSIGNMENT_CHANNELS} channels")
    power = np.sum(contributions[:, :, transient:] ** 2, axis=2)  # (source, output)
    if float(power.sum()) == 0.0:
        raise UndefinedSirError("all contributions are zero")
    best = None
    for perm in itertools.permutations(range(n_src)):
        sirs = []
        for out in range(n_src):
            src = perm[out]
            own = float(power[src, out])
            other = float(power[:, out].sum() - own)
            sirs.append(_db_ratio(own, other))
        total = sum(sirs)
        if best is None or total > best[0]:
            best = (total, perm, sirs)
    _, perm, sirs = best
    return tuple(perm), tuple(sirs)


def sdr(
    contributions: np.ndarray,
    images: list,
    assignment: tuple[int, ...],
    transient: int = 0,
) -> tuple[float, ...]:
    """Scale-optimal SDR per output against the assigned source's sensor
    image at its strongest sensor."""
    contributions = np.asarray(contributions, dtype=np.float64)
    outputs = contributions.sum(axis=0)  # (outputs, samples)
    values = []
    for out, src in enumerate(assignment):
        img = images[src].data[:, transient:]
        ref = img[int(np.argmax(np.sum(img**2, axis=1)))]
        y = outputs[out, transient:]
        ref_power = float(ref @ ref)
        if ref_power == 0.0:
            values.append(-DB_CAP)
            continue
        alpha = float(y @ ref) / ref_power
        target = alpha * ref
        residual = y - target
        values.append(_db_ratio(float(target @ target), float(residual @ residual)))
    return tuple(values)


def input_sir(images: list, transient: int = 0) -> tuple[float, ...]:
    """Per source, the SIR at its best unprocessed sensor."""
    power = np.stack([np.sum(img.data[:, transient:] ** 2, axis=1) for img in images])
    n_src, n_sensors = power.shape
    best = []
    for src in range(n_src):
        ratios = []
        for p in range(n_sensors):
            own = float(power[src, p])
            other = float(power[:, p].sum() - own)
            ratios.append(_db_ratio(own, other))
        best.append(max(ratios))
    return tuple(best)


def _trace_summary(trace: ConvergenceTrace | None) -> dict | None:
    if trace is None:
        return None
    return {
        "iterations": trace.iterations,
        "converged": trace.converged,
        "initial_mean_update_norm": trace.mean_update_norm[0] if trace.mean_update_norm else None,
        "final_mean_update_norm": trace.mean_update_norm[-1] if trace.mean_update_norm else None,
        "discarded_lag_energy": trace.discarded_lag_energy,
        "discarded_imag_energy": trace.discarded_imag_energy,
    }


def evaluate_separation(
    bank: DemixFilterBank,
    sphering: SpheringTransform,
    images: list,
    dc_cutoff_hz: float | None = None,
    transient: int | None = None,
    trace: ConvergenceTrace | None = None,
) -> SeparationReport:
    """Full report: assignment, SIR, SDR, and improvement over the best
    unprocessed sensor, skipping the filter transient."""
    if transient is None:
        transient = bank.filter_length
    contributions = project_images(bank, sphering, images, dc_cutoff_hz)
    ref_images = images
    if dc_cutoff_hz is not None:
        ref_images = [highpass_dc_removal(img, dc_cutoff_hz) for img in images]
    assignment, sir_db = sir(contributions, transient)
    sdr_db = sdr(contributions, ref_images, assignment, transient)
    in_sir = input_sir(ref_images, transient)
    per_output_input = tuple(in_sir[src] for src in assignment)
    improvement = tuple(o - i for o, i in zip(sir_db, per_output_input))
    return SeparationReport(
        assignment=assignment,
        sir_db=sir_db,
        sdr_db=sdr_db,
        sir_improvement_db=improvement,
        input_sir_db=per_output_input,
        convergence=_trace_summary(trace),
    )


def _run_and_evaluate(sim: Simulation, cfg: PipelineConfig) -> SeparationReport:
    result: PipelineResult = demix_pipeline(sim.mixed, cfg)
    return evaluate_separation(
        result.bank,
        result.sphering,
        sim.images,
        dc_cutoff_hz=cfg.dc_cutoff_hz,
        trace=result.trace,
    )


def compare_instantaneous(
    scenario: SimScenario, cfg: PipelineConfig
) -> tuple[SeparationReport, SeparationReport]:
    """Run the identical pipeline twice on one simulated mixture, once with
    an instantaneous demixer (L=1) and once with the configured length."""
    sim = build_scenario(scenario)
    cfg_inst = dc_replace(cfg, filter_length=1, hop=None)
    return _run_and_evaluate(sim, cfg_inst), _run_and_evaluate(sim, cfg)


def physical_path_length(
    filter_length: int, sample_interval_s: float, velocity_m_s: float
) -> float:
    """Propagation distance spanned by an L-tap filter: v * L * Ta."""
    if filter_length <= 0 or sample_interval_s <= 0 or velocity_m_s <= 0:
        raise ParameterError("all arguments must be positive")
    return velocity_m_s * filter_length * sample_interval_s


def moving_rms(ts: TimeSeries, window_s: float = 0.05) -> np.ndarray:
    """Centered moving-RMS envelope per channel, (channels, samples)."""
    if not window_s > 0:
        raise ParameterError(f"window must be positive, got {window_s}")
    half = max(1, int(round(window_s / ts.meta.sample_interval_s))) // 2
    squared = ts.data**2
    padded = np.concatenate(
        [np.zeros((ts.n_channels, 1)), np.cumsum(squared, axis=1)], axis=1
    )
    n = ts.n_samples
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    return np.sqrt((padded[:, hi] - padded[:, lo]) / (hi - lo))


def write_envelopes_csv(ts: TimeSeries, path, window_s: float = 0.05) -> None:
    """CSV of envelope traces: time_s, env_out1, env_out2, ..."""
    env = moving_rms(ts, window_s)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s"] + [f"env_out{p + 1}" for p in range(ts.n_channels)])
        interval = ts.meta.sample_interval_s
        for i in range(ts.n_samples):
            writer.writerow([repr(i * interval)] + [repr(float(v)) for v in env[:, i]])
