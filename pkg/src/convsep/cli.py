"""Command-line entry point: simulate, separate, evaluate, pipeline.

Every run writes a fully resolved config echo next to its outputs;
re-running any subcommand from that echo reproduces the artifacts
byte-for-byte. Exit codes: 0 success, 2 usage/config/input error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .demix import PipelineConfig, demix_pipeline
from .errors import (
    ConvsepError,
    DataError,
    FormatError,
    NumericalDivergenceError,
    ParameterError,
    UndefinedSirError,
)
from .iva import IvaConfig, write_trace_csv
from .metrics import evaluate_separation, write_envelopes_csv
from .signal import SignalMetadata, TimeSeries, read_raw, write_raw
from .simulate import (
    SimScenario,
    build_scenario,
    delayed_pair_scenario,
    diagonal_scenario,
    instantaneous_pair_scenario,
    respiratory_scenario,
)
from .spectral import load_filter_bank, save_filter_bank
from .sphering import SpheringTransform

__all__ = ["main"]

SCENARIO_PRESETS = {
    "respiratory": respiratory_scenario,
    "delayed_pair": delayed_pair_scenario,
    "instantaneous_pair": instantaneous_pair_scenario,
    "diagonal": diagonal_scenario,
}

_SCENARIO_TUPLE_FIELDS = ("source_kinds", "firing_rates_hz", "source_depths_m")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise FormatError(f"config {path} must hold a JSON object")
    return config


def _resolve_scenario(section: dict, seed: int) -> SimScenario:
    section = dict(section)
    kind = section.pop("kind", "respiratory")
    if kind not in SCENARIO_PRESETS:
        raise ParameterError(
            f"unknown scenario kind {kind!r}, expected one of {sorted(SCENARIO_PRESETS)}"
        )
    section.pop("seed", None)
    for name in _SCENARIO_TUPLE_FIELDS:
        if name in section:
            section[name] = tuple(section[name])
    try:
        return SCENARIO_PRESETS[kind](seed=seed, **section)
    except TypeError as exc:
        raise ParameterError(f"bad scenario parameter: {exc}") from exc


def _resolve(config: dict, args) -> tuple[int, Path, SimScenario, PipelineConfig, dict]:
    """Merge config file and CLI overrides into fully explicit settings."""
    seed = int(config.get("seed", 0))
    if args.seed is not None:
        seed = args.seed
    out_dir = Path(args.out if args.out is not None else config.get("out_dir", "convsep_out"))

    scenario_sec = config.get("scenario", {})
    kind = scenario_sec.get("kind", "respiratory")
    scenario = _resolve_scenario(scenario_sec, seed)

    stft_sec = dict(config.get("stft", {}))
    if args.filter_length is not None:
        stft_sec["filter_length"] = args.filter_length
    iva_sec = dict(config.get("iva", {}))
    if args.step_size is not None:
        iva_sec["step_size"] = args.step_size
    if args.iterations is not None:
        iva_sec["max_iterations"] = args.iterations
    pre_sec = dict(config.get("preprocess", {}))

    try:
        iva_cfg = IvaConfig(
            step_size=float(iva_sec.get("step_size", 0.003)),
            max_iterations=int(iva_sec.get("max_iterations", 200)),
            convergence_tol=float(iva_sec.get("convergence_tol", 1e-6)),
            norm_guard=(
                None if iva_sec.get("norm_guard") is None else float(iva_sec["norm_guard"])
            ),
        )
        pipeline_cfg = PipelineConfig(
            filter_length=int(stft_sec.get("filter_length", 64)),
            window_id=str(stft_sec.get("window", "zeropad")),
            hop=(None if stft_sec.get("hop") is None else int(stft_sec["hop"])),
            dc_cutoff_hz=(
                None if pre_sec.get("dc_cutoff_hz") is None else float(pre_sec["dc_cutoff_hz"])
            ),
            sphering=bool(pre_sec.get("sphering", True)),
            eigenvalue_floor=float(pre_sec.get("eigenvalue_floor", 1e-10)),
            iva=iva_cfg,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"bad config value: {exc}") from exc

    scenario_echo = dataclasses.asdict(scenario)
    scenario_echo.pop("seed")
    scenario_echo["kind"] = kind
    echo = {
        "seed": seed,
        "out_dir": str(out_dir),
        "scenario": scenario_echo,
        "stft": {
            "filter_length": pipeline_cfg.filter_length,
            "window": pipeline_cfg.window_id,
            "hop": pipeline_cfg.hop,
        },
        "iva": {
            "step_size": iva_cfg.step_size,
            "max_iterations": iva_cfg.max_iterations,
            "convergence_tol": iva_cfg.convergence_tol,
            "norm_guard": iva_cfg.norm_guard,
        },
        "preprocess": {
            "dc_cutoff_hz": pipeline_cfg.dc_cutoff_hz,
            "sphering": pipeline_cfg.sphering,
            "eigenvalue_floor": pipeline_cfg.eigenvalue_floor,
        },
    }
    return seed, out_dir, scenario, pipeline_cfg, echo


def _write_json(payload: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_echo(echo: dict, out_dir: Path) -> None:
    _write_json(echo, out_dir / "config_echo.json")


def cmd_simulate(out_dir: Path, scenario: SimScenario) -> None:
    sim = build_scenario(scenario)
    write_raw(sim.mixed, out_dir / "mixed.raw", out_dir / "mixed.json")
    sources_ts = TimeSeries(
        sim.sources.signals,
        SignalMetadata(scenario.sample_interval_s, sim.sources.kinds),
    )
    write_raw(sources_ts, out_dir / "sources.raw", out_dir / "sources.json")
    for q, image in enumerate(sim.images):
        write_raw(image, out_dir / f"image_src{q + 1}.raw", out_dir / f"image_src{q + 1}.json")
    kernels = sim.system.kernels
    kernel_ts = TimeSeries(
        kernels.reshape(-1, kernels.shape[2]),
        SignalMetadata(
            scenario.sample_interval_s,
            tuple(
                f"src{q + 1}->sensor{p + 1}"
                for q in range(kernels.shape[0])
                for p in range(kernels.shape[1])
            ),
        ),
    )
    write_raw(kernel_ts, out_dir / "kernels.raw", out_dir / "kernels.json")


def cmd_separate(out_dir: Path, cfg: PipelineConfig) -> None:
    mixed_path = out_dir / "mixed.raw"
    header_path = out_dir / "mixed.json"
    if not mixed_path.exists() or not header_path.exists():
        raise FormatError(f"no input signal at {mixed_path}; run `convsep simulate` first")
    mixed = read_raw(mixed_path, header_path)
    result = demix_pipeline(mixed, cfg)
    write_raw(result.separated, out_dir / "separated.raw", out_dir / "separated.json")
    save_filter_bank(result.bank, out_dir / "filterbank.raw", out_dir / "filterbank.json")
    write_trace_csv(result.trace, out_dir / "convergence.csv")
    report = {
        "filter_length": cfg.filter_length,
        "window": cfg.window_id,
        "hop": cfg.effective_hop,
        "sphering": {
            "matrix": result.sphering.matrix.tolist(),
            "eigenvalues": result.sphering.eigenvalues.tolist(),
            "regularization_eps": result.sphering.regularization_eps,
        },
        "iva": {
            "iterations": result.trace.iterations,
            "converged": result.trace.converged,
            "initial_mean_update_norm": (
                result.trace.mean_update_norm[0] if result.trace.mean_update_norm else None
            ),
            "final_mean_update_norm": (
                result.trace.mean_update_norm[-1] if result.trace.mean_update_norm else None
            ),
            "discarded_lag_energy": result.trace.discarded_lag_energy,
            "discarded_imag_energy": result.trace.discarded_imag_energy,
        },
    }
    _write_json(report, out_dir / "run_report.json")


def cmd_evaluate(out_dir: Path, scenario: SimScenario, cfg: PipelineConfig) -> None:
    bank_path = out_dir / "filterbank.raw"
    run_report_path = out_dir / "run_report.json"
    if not bank_path.exists() or not run_report_path.exists():
        raise FormatError(f"no separation artifacts in {out_dir}; run `convsep separate` first")
    images = []
    for q in range(scenario.n_sources):
        raw = out_dir / f"image_src{q + 1}.raw"
        header = out_dir / f"image_src{q + 1}.json"
        if not raw.exists() or not header.exists():
            raise FormatError(f"missing ground-truth image {raw}; run `convsep simulate` first")
        images.append(read_raw(raw, header))
    bank = load_filter_bank(bank_path, out_dir / "filterbank.json")
    with open(run_report_path, "r", encoding="utf-8") as fh:
        run_report = json.load(fh)
    sph = run_report["sphering"]
    transform = SpheringTransform(
        np.asarray(sph["matrix"], dtype=np.float64),
        np.asarray(sph["eigenvalues"], dtype=np.float64),
        float(sph["regularization_eps"]),
    )
    report = evaluate_separation(bank, transform, images, dc_cutoff_hz=cfg.dc_cutoff_hz)
    payload = report.to_dict()
    payload["convergence"] = run_report.get("iva")
    _write_json(payload, out_dir / "report.json")
    separated = read_raw(out_dir / "separated.raw", out_dir / "separated.json")
    write_envelopes_csv(separated, out_dir / "envelopes.csv")


def _run(args) -> int:
    config = _load_config(args.config)
    seed, out_dir, scenario, cfg, echo = _resolve(config, args)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.command in ("simulate", "pipeline"):
        cmd_simulate(out_dir, scenario)
    if args.command in ("separate", "pipeline"):
        cmd_separate(out_dir, cfg)
    if args.command in ("evaluate", "pipeline"):
        cmd_evaluate(out_dir, scenario, cfg)
    _write_echo(echo, out_dir)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convsep",
        description="Convolutive blind source separation of synthetic respiratory EMG.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "generate a mixture with ground truth"),
        ("separate", "fit sphering + demixing filters and separate"),
        ("evaluate", "score a separation against ground truth"),
        ("pipeline", "simulate, separate, and evaluate in one run"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument(
            "--filter-length", type=int, help="demixing filter length L (power of two)"
        )
        p.add_argument("--step-size", type=float, help="separation step size")
        p.add_argument("--iterations", type=int, help="maximum separation iterations")
        p.add_argument("--out", help="output directory")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _run(args)
    except (ParameterError, FormatError, DataError) as exc:
        print(f"convsep: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"convsep: error: {exc}", file=sys.stderr)
        return 2
    except (NumericalDivergenceError, UndefinedSirError) as exc:
        print(f"convsep: numerical failure: {exc}", file=sys.stderr)
        return 3
    except ConvsepError as exc:
        print(f"convsep: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
