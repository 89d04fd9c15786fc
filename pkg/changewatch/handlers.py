"""
Command handlers: one coroutine per CLI subcommand.
"""
import time
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .bench import calibrate_cutoff, false_positive_rate, run_bench
from .config import SamplerConfig, ScenarioSpec, load_scenario_spec, settings
from .context_manager import RunManifest, run_context
from .data_model import BoxCoxParams, DataStream, ingest, prepare_stream, restrict_days, write_stream, write_variable_specs
from .faults import fault_report, write_fault_outputs
from .logger import get_logger
from .posterior import PosteriorLog, changepoint_probabilities, changepoints, load_log, map_regime_vector, probabilities_frame, save_log
from .regimes import RegimeVector
from .sampler import run_chain, run_chains
from .simulate import generate, simulate_from_fit, truth
from .utils import gather_bounded, spawn_seeds, write_csv, write_json

logger = get_logger(__name__)

DATA_FILE = "data.csv"
VARIABLES_FILE = "variables.json"
TRUTH_FILE = "truth.json"
PROBS_FILE = "changepoint_probs.csv"
CHANGEPOINTS_FILE = "changepoints.json"
CALIBRATION_FILE = "calibration.json"
BENCH_FILE = "bench_results.csv"
BENCH_SUMMARY_FILE = "bench_summary.csv"
LONG_REPLICATIONS = 50


async def cmd_simulate(spec_file: Path, out_dir: Path, seed: Optional[int] = None) -> RunManifest:
    """Write a simulated stream, its variable specs and the true change days."""
    spec = load_scenario_spec(spec_file)
    if seed is not None:
        spec = spec.model_copy(update={"seed": seed})
    with run_context("simulate", out_dir, spec.model_dump(mode="json"), spec.seed) as manifest:
        started = time.time()
        ds = generate(spec, np.random.default_rng(spec.seed))
        manifest.add_output(write_stream(ds, Path(out_dir) / DATA_FILE))
        manifest.add_output(write_variable_specs(ds.variables, Path(out_dir) / VARIABLES_FILE))
        manifest.add_output(write_json(Path(out_dir) / TRUTH_FILE, {"scenario": spec.scenario, "changepoints": truth(spec)}))
        manifest.time("simulate", time.time() - started)
    return manifest


def _load_for_fit(
    data: Path,
    spec: Path,
    first_day: Optional[int],
    last_day: Optional[int],
    boxcox: bool,
) -> Tuple[DataStream, Dict[str, BoxCoxParams]]:
    ds = ingest(data, spec)
    if first_day is not None or last_day is not None:
        ds = restrict_days(ds, first_day, last_day)
        logger.info(f"Restricted to days {ds.days[0].day}..{ds.days[-1].day}")
    return prepare_stream(ds, boxcox=boxcox)


def _write_changepoint_report(log: PosteriorLog, cutoff: float, out_dir: Path, manifest: RunManifest) -> List[int]:
    probs = changepoint_probabilities(log)
    detected = changepoints(probs, cutoff)
    map_days = RegimeVector(map_regime_vector(log)).changepoints().tolist()
    manifest.add_output(write_csv(out_dir / PROBS_FILE, probabilities_frame(probs)))
    manifest.add_output(write_json(out_dir / CHANGEPOINTS_FILE, {
        "cutoff": cutoff,
        "changepoints": detected,
        "map_changepoints": map_days,
        "n_draws": int(log.post_burn_in().shape[0]),
    }))
    logger.info(f"Change-points at cutoff {cutoff}: {detected if detected else 'none'}")
    return detected


async def cmd_fit(
    data: Path,
    spec: Path,
    config: SamplerConfig,
    out_dir: Path,
    threads: int = 1,
    first_day: Optional[int] = None,
    last_day: Optional[int] = None,
    boxcox: bool = False,
) -> RunManifest:
    """Fit the change-point model and write the posterior log plus the change-point report."""
    out_dir = Path(out_dir)
    with run_context("fit", out_dir, config.model_dump(mode="json"), config.seed) as manifest:
        started = time.time()
        ds, boxcox_params = _load_for_fit(data, spec, first_day, last_day, boxcox)
        manifest.time("ingest", time.time() - started)

        started = time.time()
        log = await run_chains(ds, config, threads)
        manifest.time("sampling", time.time() - started)
        if boxcox_params:
            log.meta["boxcox"] = {name: {"lambda": p.lmbda, "shift": p.shift} for name, p in boxcox_params.items()}

        for path in save_log(log, out_dir):
            manifest.add_output(path)
        detected = _write_changepoint_report(log, config.cutoff, out_dir, manifest)
        manifest.extra["changepoints"] = detected
    return manifest


async def cmd_faults(log_dir: Path, day: int, out_dir: Path, seed: int = 0, n_mc: Optional[int] = None) -> RunManifest:
    """Rank variables by their contribution to the change after `day`."""
    n_mc = n_mc or settings.n_mc_hellinger
    with run_context("faults", out_dir, {"log_dir": str(log_dir), "day": day, "n_mc": n_mc}, seed) as manifest:
        log = load_log(log_dir)
        started = time.time()
        report = fault_report(log, day, n_mc, np.random.default_rng(seed))
        manifest.time("faults", time.time() - started)
        for path in write_fault_outputs(report, Path(out_dir)):
            manifest.add_output(path)
        if report.all_flagged:
            logger.warning(f"Day {day}: snapshot regimes are identical, no loss can be attributed")
        else:
            manifest.extra["ranking"] = report.ranking("total_effect")[:5]
    return manifest


def _calibration_fit(log: PosteriorLog, phi: np.ndarray, config: SamplerConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    ds = simulate_from_fit(log.final_state, phi, log.variables, log.meta["days"], log.day_counts, rng)
    ds, _ = prepare_stream(ds)
    return changepoint_probabilities(run_chain(ds, config.model_copy(update={"seed": seed, "n_chains": 1})))


async def cmd_calibrate(
    data: Path,
    spec: Path,
    config: SamplerConfig,
    out_dir: Path,
    fpr_target: float = 0.05,
    n_cal: int = 10,
    threads: int = 1,
    first_day: Optional[int] = None,
    last_day: Optional[int] = None,
    boxcox: bool = False,
) -> RunManifest:
    """Choose the cutoff that keeps the false-positive rate at `fpr_target` on data simulated from the fit."""
    out_dir = Path(out_dir)
    if not 0.0 <= fpr_target <= 1.0:
        raise ValueError(f"fpr_target must lie in [0, 1], got {fpr_target}")
    with run_context("calibrate", out_dir, config.model_dump(mode="json"), config.seed) as manifest:
        ds, _ = _load_for_fit(data, spec, first_day, last_day, boxcox)
        started = time.time()
        log = await run_chains(ds, config, threads)
        manifest.time("fit", time.time() - started)
        if log.final_state is None:
            raise ValueError("the fit left no final state to simulate from")

        phi = map_regime_vector(log)
        truth_days = RegimeVector(phi).changepoints().tolist()
        seeds = spawn_seeds(config.seed, n_cal)
        logger.warning(f"Calibration refits {n_cal} simulated datasets: about {n_cal}x the cost of one fit")

        started = time.time()
        jobs = [lambda s=s: _calibration_fit(log, phi, config, s) for s in seeds]
        prob_sets = await gather_bounded(jobs, threads)
        manifest.time("calibration", time.time() - started)

        cutoff = calibrate_cutoff(truth_days, prob_sets, fpr_target)
        achieved = false_positive_rate(truth_days, prob_sets, cutoff)
        manifest.add_output(write_json(out_dir / CALIBRATION_FILE, {
            "cutoff": cutoff,
            "fpr_target": fpr_target,
            "achieved_fpr": achieved,
            "map_changepoints": truth_days,
            "n_cal": n_cal,
            "seeds": seeds,
        }))
        manifest.extra.update({"n_cal": n_cal, "seeds": seeds, "cutoff": cutoff})
        logger.info(f"Calibrated cutoff {cutoff:.4f} (FPR {achieved:.4f}, target {fpr_target})")
    return manifest


def resolve_scenarios(items: Sequence[str]) -> List[ScenarioSpec]:
    """Scenario ids (A..H) or paths to scenario spec files."""
    specs = []
    for item in items:
        path = Path(item)
        specs.append(load_scenario_spec(path) if path.suffix == ".json" else ScenarioSpec(scenario=item.upper()))
    return specs


async def cmd_bench(
    scenarios: Sequence[str],
    config: SamplerConfig,
    out_dir: Path,
    replications: int = 10,
    long: bool = False,
    threads: int = 1,
    external: Optional[Mapping[str, str]] = None,
) -> RunManifest:
    """Score the model and the Hotelling T^2 baseline over seeded replications."""
    out_dir = Path(out_dir)
    specs = resolve_scenarios(scenarios)
    n_rep = LONG_REPLICATIONS if long else replications
    echo = {"sampler": config.model_dump(mode="json"), "scenarios": [s.model_dump(mode="json") for s in specs], "replications": n_rep}
    with run_context("bench", out_dir, echo, config.seed) as manifest:
        started = time.time()
        frame = await run_bench(specs, config, n_rep, threads, external)
        manifest.time("bench", time.time() - started)
        manifest.add_output(write_csv(out_dir / BENCH_FILE, frame))
        summary = frame.groupby(["scenario", "method"], as_index=False).agg(
            detection_rate=("detected", "mean"), mean_fpr=("fpr", "mean"), replications=("replication", "count"),
        )
        manifest.add_output(write_csv(out_dir / BENCH_SUMMARY_FILE, summary))
        logger.info(f"Bench summary:\n{summary.to_string(index=False)}")
    return manifest
