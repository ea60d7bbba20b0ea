#!/usr/bin/env python3
"""
LSFA flooding-defense simulator - command line
Runs seeded experiment sweeps over attacker ratios and defense modes and
writes per-metric CSV tables, per-run JSON reports and optional logs.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import Config
from metrics import METRICS, RunReport, SweepRow, aggregate_sweep, format_csv, rows_by_metric
from model import (
    FIELD_DOCS, ConfigError, ScenarioConfig, ScenarioFileError, apply_overrides,
    config_field_names, dump_scenario, load_scenario, validate_config
)
from network import Network
from utils.file_utils import ensure_directory, save_json, write_text
from utils.logging_utils import TabLogWriter, get_logger, set_global_level

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4


# ============================================================================
# PRESETS
# ============================================================================

_REFERENCE = ScenarioConfig()

PRESETS: Dict[str, ScenarioConfig] = {
    # The three reference scenarios differ only in the attacker ratio
    "reference-1": _REFERENCE.with_overrides(attacker_ratio=0.10),
    "reference-2": _REFERENCE.with_overrides(attacker_ratio=0.20),
    "reference-3": _REFERENCE.with_overrides(attacker_ratio=0.30),
    "static-lossless": _REFERENCE.with_overrides(
        node_count=20, cbr_flow_count=5, sim_duration=200.0, attacker_ratio=0.0,
        v_min=0.0, v_max=0.0, pause_time=0.0, link_success_prob=1.0,
        field_width=500.0, field_height=500.0,
    ),
    "quick": _REFERENCE.with_overrides(
        node_count=30, cbr_flow_count=4, sim_duration=60.0, attacker_ratio=0.10,
        field_width=600.0, field_height=600.0, experiments=2,
    ),
}

PRESET_DOCS = {
    "reference-1": "100 nodes, 1000x1000 m, 2000 s, 10% attackers",
    "reference-2": "as scenario 1 with 20% attackers",
    "reference-3": "as scenario 1 with 30% attackers",
    "static-lossless": "20 static nodes, 5 flows, 200 s, lossless, no attackers",
    "quick": "30 nodes, 60 s smoke run",
}


def resolve_scenario(name: str) -> ScenarioConfig:
    """Preset name or path to a scenario file"""
    if name in PRESETS:
        return PRESETS[name]
    return load_scenario(name)


# ============================================================================
# RUNS
# ============================================================================

def derive_run_seed(base_seed: int, ratio_index: int, seed_index: int, defense_on: bool) -> int:
    """Per-run seed mixed from the base seed and the run's position in the sweep"""
    mix = np.random.SeedSequence([base_seed, ratio_index, seed_index, int(defense_on)])
    return int(mix.generate_state(1, np.uint64)[0])


def run_scenario(
    cfg: ScenarioConfig,
    seed: Optional[int] = None,
    trace_path: Optional[Path] = None,
    detect_path: Optional[Path] = None,
    report_path: Optional[Path] = None,
) -> RunReport:
    """
    Simulate one configuration to cfg.sim_duration

    Args:
        cfg: Scenario configuration
        seed: Run seed (default: cfg.seed)
        trace_path: Optional event trace destination
        detect_path: Optional detection log destination
        report_path: Optional JSON report destination

    Returns:
        RunReport of the run

    Raises:
        ConfigError: The configuration violates an invariant
        OSError: A log or report file could not be written
    """
    violations = validate_config(cfg)
    if violations:
        raise ConfigError(violations)
    trace = TabLogWriter(trace_path) if trace_path is not None else None
    detect = TabLogWriter(detect_path, float_digits=3) if detect_path is not None else None
    try:
        report = Network(cfg, seed=seed, trace=trace, detect_log=detect).run()
    finally:
        for writer in (trace, detect):
            if writer is not None:
                writer.close()
    if report_path is not None and not save_json(report.to_dict(), str(report_path)):
        raise OSError(f"could not write report {report_path}")
    return report


@dataclass(frozen=True)
class RunTask:
    index: int
    ratio_index: int
    seed_index: int
    defense_on: bool
    cfg: ScenarioConfig
    trace_path: Optional[Path] = None
    detect_path: Optional[Path] = None
    report_path: Optional[Path] = None


def _execute(task: RunTask) -> Tuple[int, RunReport]:
    return task.index, run_scenario(task.cfg, task.cfg.seed, task.trace_path,
                                    task.detect_path, task.report_path)


@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioConfig
    ratios: Tuple[float, ...]
    seeds: Tuple[int, ...]
    defense_modes: Tuple[bool, ...] = (True,)
    out_dir: Path = field(default_factory=lambda: Path(Config.OUTPUT_DIR))
    trace: bool = False
    detect_log: bool = False
    jobs: int = 1
    combined: bool = False

    @property
    def run_count(self) -> int:
        return len(self.ratios) * len(self.seeds) * len(self.defense_modes)


def _mode_name(defense_on: bool) -> str:
    return "on" if defense_on else "off"


def plan_runs(spec: SweepSpec) -> List[RunTask]:
    """Cross product ratios x seeds x defense modes, in a fixed order"""
    tasks = []
    for defense_on in spec.defense_modes:
        mode = _mode_name(defense_on)
        for r_idx, ratio in enumerate(spec.ratios):
            for s_idx, seed in enumerate(spec.seeds):
                run_seed = derive_run_seed(spec.base.seed, r_idx, seed, defense_on)
                cfg = spec.base.with_overrides(attacker_ratio=ratio, defense_enabled=defense_on,
                                               seed=run_seed)
                stem = f"defense-{mode}_ratio-{ratio:.3f}_seed-{seed}"
                tasks.append(RunTask(
                    index=len(tasks),
                    ratio_index=r_idx,
                    seed_index=s_idx,
                    defense_on=defense_on,
                    cfg=cfg,
                    trace_path=spec.out_dir / "trace" / f"{stem}.tsv" if spec.trace else None,
                    detect_path=spec.out_dir / "detect" / f"{stem}.tsv" if spec.detect_log else None,
                    report_path=spec.out_dir / "runs" / f"{stem}.json",
                ))
    return tasks


def _collect(tasks: Sequence[RunTask], jobs: int, progress: bool) -> List[RunReport]:
    results: Dict[int, RunReport] = {}
    with tqdm(total=len(tasks), desc="Simulating", file=sys.stderr, disable=not progress) as pbar:
        if jobs <= 1:
            for task in tasks:
                index, report = _execute(task)
                results[index] = report
                pbar.update(1)
        else:
            with ProcessPoolExecutor(max_workers=jobs) as executor:
                futures = {executor.submit(_execute, task): task.index for task in tasks}
                for future in as_completed(futures):
                    index, report = future.result()
                    results[index] = report
                    pbar.update(1)
    return [results[task.index] for task in tasks]


def sweep_rows(spec: SweepSpec, tasks: Sequence[RunTask],
               reports: Sequence[RunReport]) -> Dict[bool, List[SweepRow]]:
    """Aggregated rows per defense mode"""
    rows: Dict[bool, List[SweepRow]] = {}
    for defense_on in spec.defense_modes:
        by_ratio: Dict[float, List[RunReport]] = {ratio: [] for ratio in spec.ratios}
        for task, report in zip(tasks, reports):
            if task.defense_on == defense_on:
                by_ratio[spec.ratios[task.ratio_index]].append(report)
        rows[defense_on] = aggregate_sweep(by_ratio)
    return rows


def write_sweep(spec: SweepSpec, rows: Dict[bool, List[SweepRow]]) -> bool:
    """One CSV per metric and mode, or one sweep.csv per mode when combined"""
    ok = True
    for defense_on, mode_rows in rows.items():
        mode_dir = spec.out_dir / f"defense-{_mode_name(defense_on)}"
        if spec.combined:
            ok &= write_text(str(mode_dir / "sweep.csv"), format_csv(mode_rows))
            continue
        grouped = rows_by_metric(mode_rows)
        for metric in METRICS:
            ok &= write_text(str(mode_dir / f"{metric}.csv"), format_csv(grouped.get(metric, [])))
    return ok


def run_sweep(spec: SweepSpec, progress: bool = True) -> int:
    """
    Run every (ratio, seed, mode) cell and write the aggregated CSVs

    Returns:
        Process exit status
    """
    if not spec.seeds or not spec.ratios or not spec.defense_modes:
        logger.error("sweep needs at least one seed, one ratio and one defense mode")
        return EXIT_USAGE
    tasks = plan_runs(spec)
    for task in tasks:
        violations = validate_config(task.cfg)
        if violations:
            logger.error(f"invalid configuration (ratio {task.cfg.attacker_ratio}): {'; '.join(violations)}")
            return EXIT_CONFIG

    try:
        ensure_directory(str(spec.out_dir))
    except OSError as e:
        logger.error(f"cannot create output directory {spec.out_dir}: {e}")
        return EXIT_IO

    logger.info(f"Running {len(tasks)} simulations "
                f"({len(spec.ratios)} ratios x {len(spec.seeds)} seeds x {len(spec.defense_modes)} modes, "
                f"jobs={spec.jobs})")
    try:
        reports = _collect(tasks, spec.jobs, progress)
    except OSError as e:
        logger.error(f"run output failed: {e}")
        return EXIT_IO

    rows = sweep_rows(spec, tasks, reports)
    if not write_sweep(spec, rows):
        return EXIT_IO
    for defense_on, mode_rows in rows.items():
        print(f"# defense {_mode_name(defense_on)}")
        print(format_csv(mode_rows), end="")
    logger.info(f"Results written to {spec.out_dir}")
    return EXIT_OK


# ============================================================================
# ARGUMENT PARSING
# ============================================================================

def _epilog() -> str:
    defaults = ScenarioConfig()
    lines = ["presets:"]
    lines += [f"  {name:<18} {doc}" for name, doc in PRESET_DOCS.items()]
    lines.append("")
    lines.append("scenario keys (scenario file `key = value` lines or --set key=value):")
    for name in config_field_names():
        lines.append(f"  {name:<27} {FIELD_DOCS.get(name, '')} [default {getattr(defaults, name)}]")
    lines.append("")
    lines.append("exit status: 0 ok, 2 usage error, 3 invalid configuration, 4 I/O failure")
    return "\n".join(lines)


def parse_seeds(text: str) -> Tuple[int, ...]:
    """`5` means seeds 0..4; `1,7,9` is an explicit list and `7,` is the single seed 7"""
    text = text.strip()
    if not text:
        return ()
    if "," not in text:
        count = int(text)
        if count < 0:
            raise ValueError("seed count must be >= 0")
        return tuple(range(count))
    seeds = tuple(int(part) for part in text.split(",") if part.strip())
    if any(s < 0 for s in seeds):
        raise ValueError("seeds must be >= 0")
    return seeds


def parse_ratios(text: str) -> Tuple[float, ...]:
    if text.strip() == "all":
        return tuple(Config.DEFAULT_RATIOS)
    return tuple(float(part) for part in text.split(",") if part.strip())


def parse_overrides(pairs: Sequence[str]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsfa-sim",
        description="Simulate RREQ flooding attacks and the LSFA two-phase defense over AODV.",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--scenario", default="reference-1",
                        help="preset name or scenario file (default: reference-1)")
    parser.add_argument("--seeds", default=None,
                        help="number of seeds, or a comma-separated seed list "
                             "(`7,` is seed 7 alone; default: scenario experiments)")
    parser.add_argument("--ratios", default=None,
                        help="comma-separated attacker ratios, or 'all' (default: scenario ratio)")
    parser.add_argument("--defense", choices=("on", "off", "both"), default="on")
    parser.add_argument("--out", default=Config.OUTPUT_DIR, help="output directory")
    parser.add_argument("--trace", action="store_true", help="write per-run event traces")
    parser.add_argument("--detect-log", action="store_true", help="write per-run detection logs")
    parser.add_argument("--jobs", type=int, default=Config.DEFAULT_JOBS, help="parallel runs")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one scenario key (repeatable)")
    parser.add_argument("--combined", action="store_true", help="write a single sweep.csv per mode")
    parser.add_argument("--log-level", default=None,
                        choices=("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"))
    parser.add_argument("--no-progress", action="store_true", help="hide the progress bar")
    parser.add_argument("--dump-config", action="store_true",
                        help="print the resolved scenario and exit")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.log_level:
        set_global_level(args.log_level)
    if not Config.validate():
        logger.warning(f"Ignoring invalid LSFA_* environment settings {list(Config.INVALID_ENV)}")

    try:
        seeds = parse_seeds(args.seeds) if args.seeds is not None else None
        ratios = parse_ratios(args.ratios) if args.ratios is not None else None
        overrides = parse_overrides(args.overrides)
    except ValueError as e:
        parser.print_usage(sys.stderr)
        print(f"lsfa-sim: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.jobs < 1:
        print("lsfa-sim: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE

    try:
        base = apply_overrides(resolve_scenario(args.scenario), overrides)
    except ScenarioFileError as e:
        logger.error(f"Invalid scenario: {e}")
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"Cannot read scenario {args.scenario}: {e}")
        return EXIT_IO

    violations = validate_config(base)
    if violations:
        logger.error(f"Invalid configuration: {'; '.join(violations)}")
        return EXIT_CONFIG

    if args.dump_config:
        print(dump_scenario(base), end="")
        return EXIT_OK

    if seeds is None:
        seeds = tuple(range(Config.DEFAULT_SEEDS if Config.DEFAULT_SEEDS else base.experiments))
    if not seeds:
        print("lsfa-sim: error: empty seed list", file=sys.stderr)
        return EXIT_USAGE
    if ratios is None:
        ratios = (base.attacker_ratio,)
    if not ratios:
        print("lsfa-sim: error: empty ratio list", file=sys.stderr)
        return EXIT_USAGE
    modes = {"on": (True,), "off": (False,), "both": (True, False)}[args.defense]

    spec = SweepSpec(
        base=base,
        ratios=ratios,
        seeds=seeds,
        defense_modes=modes,
        out_dir=Path(args.out),
        trace=args.trace,
        detect_log=args.detect_log,
        jobs=args.jobs,
        combined=args.combined,
    )
    return run_sweep(spec, progress=Config.SHOW_PROGRESS and not args.no_progress)


if __name__ == "__main__":
    sys.exit(main())
