import json
from dataclasses import asdict
from pathlib import Path

import pytest

from cli import (
    EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_USAGE, PRESETS, SweepSpec, derive_run_seed, main,
    parse_ratios, parse_seeds, plan_runs, run_sweep
)
from config import Config
from metrics import CSV_HEADER, METRICS
from model import ScenarioConfig, config_field_names, parse_scenario

TINY = ScenarioConfig(
    node_count=6, field_width=400.0, field_height=400.0, cbr_flow_count=1, sim_duration=12.0,
    attacker_start=2.0, experiments=2,
)


def _files(root: Path):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# ---------------------------------------------------------------------------
# Presets and seeds
# ---------------------------------------------------------------------------

def test_reference_presets_differ_only_in_attacker_ratio():
    names = ["reference-1", "reference-2", "reference-3"]
    configs = [asdict(PRESETS[name]) for name in names]
    assert [c.pop("attacker_ratio") for c in configs] == [0.10, 0.20, 0.30]
    assert configs[0] == configs[1] == configs[2]


def test_run_seed_derivation():
    seed = derive_run_seed(1, 2, 3, True)
    assert seed == derive_run_seed(1, 2, 3, True)
    assert 0 <= seed < 2 ** 64
    others = {derive_run_seed(1, 2, 3, False), derive_run_seed(1, 2, 4, True),
              derive_run_seed(1, 1, 3, True), derive_run_seed(2, 2, 3, True)}
    assert seed not in others


@pytest.mark.parametrize("text,expected", [
    ("3", (0, 1, 2)),
    ("4,9,2", (4, 9, 2)),
    ("7,", (7,)),
    (" 7 , ", (7,)),
    ("0", ()),
    ("", ()),
])
def test_parse_seeds(text, expected):
    assert parse_seeds(text) == expected


def test_parse_ratios():
    assert parse_ratios("0.1,0.2") == (0.1, 0.2)
    assert parse_ratios("all") == tuple(Config.DEFAULT_RATIOS)


def test_plan_is_the_full_cross_product(tmp_path):
    spec = SweepSpec(base=TINY, ratios=(0.0, 0.2), seeds=(0, 1, 2), defense_modes=(True, False),
                     out_dir=tmp_path)
    tasks = plan_runs(spec)
    assert len(tasks) == spec.run_count == 12
    assert len({t.cfg.seed for t in tasks}) == 12
    assert tasks[0].report_path == tmp_path / "runs" / "defense-on_ratio-0.000_seed-0.json"
    assert tasks[0].trace_path is None


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _sweep(out_dir, jobs=1, **kwargs):
    spec = SweepSpec(base=TINY, ratios=(0.0, 0.2), seeds=(0, 1), out_dir=out_dir, jobs=jobs, **kwargs)
    return run_sweep(spec, progress=False)


def test_sweep_writes_one_table_per_metric(tmp_path):
    assert _sweep(tmp_path) == EXIT_OK
    for metric in METRICS:
        lines = (tmp_path / "defense-on" / f"{metric}.csv").read_text().splitlines()
        assert lines[0] == CSV_HEADER
        assert len(lines) == 3
        assert lines[1].startswith("0.000,")
        assert lines[2].startswith("0.200,")
    reports = sorted((tmp_path / "runs").glob("*.json"))
    assert len(reports) == 4
    data = json.loads(reports[0].read_text())
    assert data["node_count"] == 6
    assert "wall_time" not in data


def test_combined_table(tmp_path):
    assert _sweep(tmp_path, combined=True) == EXIT_OK
    lines = (tmp_path / "defense-on" / "sweep.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * len(METRICS)


def test_logs_are_written_on_request(tmp_path):
    assert _sweep(tmp_path, trace=True, detect_log=True) == EXIT_OK
    assert len(list((tmp_path / "trace").glob("*.tsv"))) == 4
    assert len(list((tmp_path / "detect").glob("*.tsv"))) == 4


def test_reruns_are_byte_identical(tmp_path):
    assert _sweep(tmp_path / "a") == EXIT_OK
    assert _sweep(tmp_path / "b") == EXIT_OK
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


@pytest.mark.parametrize("jobs", [2, 4])
def test_parallel_sweep_matches_serial(tmp_path, jobs):
    assert _sweep(tmp_path / "serial") == EXIT_OK
    assert _sweep(tmp_path / "parallel", jobs=jobs) == EXIT_OK
    assert _files(tmp_path / "serial") == _files(tmp_path / "parallel")


def test_empty_sweep_is_a_usage_error(tmp_path):
    assert run_sweep(SweepSpec(base=TINY, ratios=(0.1,), seeds=(), out_dir=tmp_path), progress=False) == EXIT_USAGE


def test_invalid_ratio_fails_before_running(tmp_path):
    spec = SweepSpec(base=TINY, ratios=(0.5,), seeds=(0,), out_dir=tmp_path)
    assert run_sweep(spec, progress=False) == EXIT_CONFIG
    assert not (tmp_path / "runs").exists()


# ---------------------------------------------------------------------------
# main
# ---------------------------------------------------------------------------

def test_zero_seeds_is_a_usage_error(tmp_path):
    assert main(["--scenario", "quick", "--seeds", "0", "--out", str(tmp_path), "--no-progress"]) == EXIT_USAGE


@pytest.mark.parametrize("override", ["alpha_low=2", "no_such_key=1", "node_count=abc"])
def test_bad_override_is_a_config_error(tmp_path, override):
    assert main(["--scenario", "quick", "--set", override, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_missing_scenario_file_is_an_io_error(tmp_path):
    assert main(["--scenario", str(tmp_path / "missing.scn"), "--out", str(tmp_path)]) == EXIT_IO


def test_malformed_scenario_file_is_a_config_error(tmp_path):
    path = tmp_path / "broken.scn"
    path.write_text("node_count = 20\nthis line has no equals sign\n")
    assert main(["--scenario", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_help_lists_every_key_and_preset(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in config_field_names():
        assert name in out
    for preset in PRESETS:
        assert preset in out


def test_dump_config_round_trips(capsys):
    assert main(["--scenario", "quick", "--set", "node_count=40", "--dump-config"]) == EXIT_OK
    dumped = parse_scenario(capsys.readouterr().out)
    assert dumped == PRESETS["quick"].with_overrides(node_count=40)


def test_end_to_end_run(tmp_path, capsys):
    status = main([
        "--scenario", "static-lossless", "--set", "sim_duration=30", "--seeds", "1",
        "--out", str(tmp_path), "--no-progress",
    ])
    assert status == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("# defense on\n")
    assert "0.000,pdr,100.000,0.000,1" in out
    assert (tmp_path / "defense-on" / "pdr.csv").exists()
