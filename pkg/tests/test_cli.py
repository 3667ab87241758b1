from __future__ import annotations

import csv
from pathlib import Path

import pytest

from swarmsim.cli.main import main

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "swarmsim" / "scenarios"
CIRCLE = str(SCENARIOS / "circle_track.yaml")
SLIP = str(SCENARIOS / "localize_slip.yaml")
ARENA = str(SCENARIOS / "plan_arena.yaml")


def read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_validate_reports_digest(capsys):
    assert main(["validate", CIRCLE]) == 0
    out = capsys.readouterr().out
    assert "valid: true" in out
    assert "config_digest:" in out
    assert "kind: track" in out


def test_unknown_key_is_named(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(
        "name: bad\nkind: track\nseed: 1\n"
        "robot:\n  geometry:\n    wheel_bsae: 100.0\n"
        "control:\n  reference: {shape: circle, radius: 500.0, speed: 80.0}\n"
    )
    assert main(["validate", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "wheel_bsae" in err


def test_missing_required_key_rejected(tmp_path, capsys):
    bad = tmp_path / "nameless.yaml"
    bad.write_text("kind: track\nseed: 1\n")
    assert main(["validate", str(bad)]) == 2
    assert "name" in capsys.readouterr().err


def test_kind_mismatch_rejected(tmp_path, capsys):
    assert main(["track", SLIP, "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "kind" in err and "localize" in err


def test_bad_override_format(tmp_path, capsys):
    assert main(["validate", CIRCLE, "--override", "seed"]) == 2
    assert "override" in capsys.readouterr().err


def test_unknown_variant_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["compare", SLIP, "--out", str(tmp_path), "--variants", "psychic"])
    assert exc.value.code == 2


def test_track_csv_column_order(tmp_path, capsys):
    assert main(["track", CIRCLE, "--out", str(tmp_path),
                 "--override", "duration_s=3.0"]) == 0
    header = (tmp_path / "track.csv").read_text().splitlines()[0]
    assert header == "t,x_r,y_r,theta_r,x_c,y_c,theta_c,x_e,y_e,theta_e,v1,v2,V"


def test_summary_ends_with_wall_clock(tmp_path, capsys):
    assert main(["track", CIRCLE, "--out", str(tmp_path),
                 "--override", "duration_s=3.0"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "scenario: circle_track"
    assert lines[-1].startswith("wall_clock_s:")


def test_rerun_is_byte_identical(tmp_path, capsys):
    for sub in ("a", "b"):
        assert main(["localize", SLIP, "--out", str(tmp_path / sub),
                     "--override", "duration_s=5.0"]) == 0
    capsys.readouterr()
    first = (tmp_path / "a" / "estimates.csv").read_bytes()
    second = (tmp_path / "b" / "estimates.csv").read_bytes()
    assert first == second


def test_seed_flag_equals_seed_override(tmp_path, capsys):
    assert main(["localize", SLIP, "--out", str(tmp_path / "flag"),
                 "--seed", "42", "--override", "duration_s=5.0"]) == 0
    assert main(["localize", SLIP, "--out", str(tmp_path / "override"),
                 "--override", "seed=42", "--override", "duration_s=5.0"]) == 0
    capsys.readouterr()
    assert ((tmp_path / "flag" / "estimates.csv").read_bytes()
            == (tmp_path / "override" / "estimates.csv").read_bytes())


def test_seed_changes_the_noise(tmp_path, capsys):
    for seed in ("1", "2"):
        assert main(["localize", SLIP, "--out", str(tmp_path / seed),
                     "--seed", seed, "--override", "duration_s=5.0"]) == 0
    capsys.readouterr()
    assert ((tmp_path / "1" / "estimates.csv").read_bytes()
            != (tmp_path / "2" / "estimates.csv").read_bytes())


def test_compare_adaptive_has_minimum_terminal_error(tmp_path, capsys):
    assert main(["compare", SLIP, "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    rows = read_rows(tmp_path / "compare.csv")
    assert [row["variant"] for row in rows] == [
        "adaptive", "nonadaptive", "fixed_dt", "wheels"]
    terminal = {row["variant"]: float(row["terminal_mm"]) for row in rows}
    assert terminal["adaptive"] == min(terminal.values())


def test_compare_single_variant(tmp_path, capsys):
    assert main(["compare", SLIP, "--out", str(tmp_path),
                 "--variants", "adaptive"]) == 0
    capsys.readouterr()
    rows = read_rows(tmp_path / "compare.csv")
    assert len(rows) == 1 and rows[0]["variant"] == "adaptive"


def test_compare_variants_agree_without_noise_or_slip(tmp_path, capsys):
    # Nothing to disambiguate: quantization-limited errors, same for all.
    assert main(["compare", SLIP, "--out", str(tmp_path),
                 "--override", "robot.noiseless=true",
                 "--override", "robot.slip=[]",
                 "--override", "channel.loss_prob=0.0"]) == 0
    capsys.readouterr()
    rows = read_rows(tmp_path / "compare.csv")
    terminal = {row["variant"]: float(row["terminal_mm"]) for row in rows
                if row["variant"] in ("adaptive", "nonadaptive", "fixed_dt")}
    spread = max(terminal.values()) - min(terminal.values())
    assert spread < 1.0


def test_plan_endpoint_inside_wall_faults(tmp_path, capsys):
    assert main(["plan", ARENA, "--out", str(tmp_path),
                 "--override", "plan.start=[750.0, 300.0]"]) == 3
    assert "fault:" in capsys.readouterr().err


def test_outputs_carry_no_wall_clock(tmp_path, capsys):
    assert main(["localize", SLIP, "--out", str(tmp_path),
                 "--override", "duration_s=5.0"]) == 0
    capsys.readouterr()
    for path in tmp_path.iterdir():
        assert b"wall_clock" not in path.read_bytes()
