import csv
import io
import subprocess
import sys
import textwrap
from pathlib import Path

import pytest
import yaml

from ambized.cli import main
from ambized.scenario import ScenarioError, load_scenario, parse_scenario

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

SMALL_TWO_TAG = textwrap.dedent("""\
    noise: {sigma2: 1.0}
    tags:
      - {name: A, wait: 0.6, reflect: 0.3}
      - {name: B, wait: 1.4, relative_db: 0.0}
    detector: {p_fa: 1.0e-2}
    run: {duration: 4.4, trials: 2, t_obs: 1.4, calibration_duration: 30.0}
    sweeps: {margins: [0, 6, 12]}
""")


def write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_psl_command(capsys):
    assert main(["psl"]) == 0
    assert capsys.readouterr().out.strip() == "21.93 dB"
    assert main(["psl", "--code", "barker13"]) == 0
    assert capsys.readouterr().out.strip() == "22.27 dB"
    assert main(["psl", "--code", "1"]) == 0
    assert capsys.readouterr().out.strip() == "inf dB"


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "ambized.cli", "psl"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "21.93 dB"


def test_detect_zero_tags_reports_false_alarm_rate(tmp_path, capsys):
    out = tmp_path / "h0"
    rc = main(["detect", "--scenario", str(SCENARIOS / "h0.yaml"), "--out", str(out),
               "--trials", "2", "--pfa", "0.01"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "declared-detection rate" in text
    row = read_csv(out / "metrics.csv")[0]
    windows, exceed = int(row["windows"]), int(row["exceed"])
    assert windows > 3000
    se = (0.01 * 0.99 / windows) ** 0.5
    assert abs(exceed / windows - 0.01) < 4 * se
    for name in ("calibration.csv", "trace.csv", "detections.csv", "summary.txt"):
        assert (out / name).exists()
    trace = read_csv(out / "trace.csv")
    assert list(trace[0]) == ["n", "t_seconds", "R_M"]


def test_detect_two_tags_and_margin_sweep(tmp_path):
    sc = write(tmp_path, SMALL_TWO_TAG)
    assert main(["detect", "--scenario", str(sc), "--out", str(tmp_path / "d")]) == 0
    rows = read_csv(tmp_path / "d" / "detections.csv")
    assert rows and {r["primary_label"] for r in rows} <= {"correct", "false_alarm", ""}
    assert (tmp_path / "d" / "timing_errors.csv").exists()
    assert main(["sweep-margin", "--scenario", str(sc), "--out", str(tmp_path / "m")]) == 0
    margins = read_csv(tmp_path / "m" / "margin.csv")
    assert [float(r["margin_db"]) for r in margins] == [0.0, 6.0, 12.0]
    for r in margins:
        assert int(r["errors"]) == int(r["false_alarms"]) + int(r["missed_detections"])


def test_per_subcarrier_output(tmp_path):
    sc = write(tmp_path, SMALL_TWO_TAG.replace("trials: 2", "trials: 1"))
    assert main(["detect", "--scenario", str(sc), "--out", str(tmp_path / "d"), "--per-subcarrier"]) == 0
    rows = read_csv(tmp_path / "d" / "subcarriers.csv")
    assert {int(r["k"]) for r in rows} == set(range(24))


def test_sweep_roc(tmp_path):
    out = tmp_path / "roc"
    rc = main(["sweep-roc", "--scenario", str(SCENARIOS / "single.yaml"), "--out", str(out),
               "--trials", "40"])
    assert rc == 0
    rows = read_csv(out / "roc.csv")
    assert len(rows) == 6 * 3
    assert all(0.0 <= float(r["p_d_observed"]) <= 1.0 for r in rows)


def test_reruns_are_byte_identical(tmp_path):
    sc = write(tmp_path, SMALL_TWO_TAG)
    for d in ("a", "b"):
        assert main(["detect", "--scenario", str(sc), "--out", str(tmp_path / d), "--seed", "7"]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    assert main(["detect", "--scenario", str(sc), "--out", str(tmp_path / "c"), "--seed", "8"]) == 0
    assert (tmp_path / "c" / "trace.csv").read_bytes() != (tmp_path / "a" / "trace.csv").read_bytes()


def test_missing_scenario_leaves_no_output(tmp_path, capsys):
    out = tmp_path / "never"
    rc = main(["detect", "--scenario", str(tmp_path / "missing.yaml"), "--out", str(out)])
    assert rc != 0
    assert not out.exists()
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("edit, field", [
    (lambda d: d["detector"].update(cutoff=5000.0), "detector.cutoff"),
    (lambda d: d["run"].update(duration=1.0), "run.duration"),
    (lambda d: d["noise"].pop("sigma2"), "noise.sigma2"),
    (lambda d: d["tags"][0].update(colour="red"), "tags[0].colour"),
    (lambda d: d["tags"][1].update(reflect=0.1), "tags[1]"),
    (lambda d: d["detector"].update(p_fa=1.5), "detector.p_fa"),
])
def test_scenario_errors_name_the_field(tmp_path, capsys, edit, field):
    doc = yaml.safe_load(SMALL_TWO_TAG)
    edit(doc)
    sc = write(tmp_path, yaml.safe_dump(doc))
    out = tmp_path / "o"
    assert main(["calibrate", "--scenario", str(sc), "--out", str(out)]) == 2
    assert field in capsys.readouterr().err
    assert not out.exists()
    with pytest.raises(ScenarioError):
        parse_scenario(doc)


def test_wrong_subcommand_for_scenario(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["sweep-margin", "--scenario", str(SCENARIOS / "single.yaml"), "--out", str(out)]) == 2
    assert "two tags" in capsys.readouterr().err
    assert not out.exists()


def test_bad_arguments_exit_nonzero(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["detect", "--scenario", "x.yaml", "--out", str(tmp_path), "--trials", "0"])
    assert e.value.code != 0
    with pytest.raises(SystemExit):
        main(["detect", "--scenario", "x.yaml", "--out", str(tmp_path), "--pfa", "a,b"])


def test_shipped_scenarios_load():
    for p in sorted(SCENARIOS.glob("*.yaml")):
        sf = load_scenario(p)
        assert sf.spec.duration >= max([t.cycle for t in sf.spec.scenario.tags], default=0.0)
    ref = load_scenario(SCENARIOS / "reference.yaml")
    a, b = ref.spec.scenario.chans.reflect
    assert abs(b) == pytest.approx(abs(a) * 10 ** (-10 / 40))
    assert load_scenario(SCENARIOS / "reference.yaml", {"trials": 3, "seed": 4, "p_fa": [0.1]}).spec.n_trials == 3
