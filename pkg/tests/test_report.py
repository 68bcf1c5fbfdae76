import json
import warnings
import xml.etree.ElementTree as ET

import pandas as pd
import pytest

from ivforge import errors
from ivforge.basetypes import ExperimentConfig, LinearInteraction, ProductInstrument, TransformId
from ivforge.dgp import simulate
from ivforge.montecarlo import SimulationReport, SweepResult, bias_sweep, run_experiment, transform_audit
from ivforge.report import emit_report, to_frame

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def sweep() -> SweepResult:
    cfg = ExperimentConfig(
        dgp=LinearInteraction(), n_per_rep=200, replications=12, master_seed=4, rho_grid=[-1.0, 0.0, 1.0],
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", errors.WeakInstrumentWarning)
        return bias_sweep(cfg, threads=2)


def test_json_round_trip(sweep, tmp_path):
    path = emit_report(sweep.points[0], "json", tmp_path / "point.json")
    loaded = SimulationReport.model_validate_json(path.read_text(encoding="utf-8"))
    assert loaded == sweep.points[0]
    assert json.loads(path.read_text(encoding="utf-8"))["config"]["dgp"]["kind"] == "linear_interaction"


def test_sweep_csv(sweep, tmp_path):
    path = emit_report(sweep, "csv", tmp_path / "sweep.csv")
    frame = pd.read_csv(path, float_precision="round_trip")
    assert list(frame.columns) == ["rho", "rep", "theta_hat", "identified"]
    assert len(frame) == 3 * 12
    assert sorted(frame["rho"].unique()) == [-1.0, 0.0, 1.0]
    first = frame[frame["rho"] == -1.0]["theta_hat"].tolist()
    assert first == sweep.points[0].per_rep_theta


def test_replication_frame_keeps_unidentified_rows():
    report = SimulationReport(
        config=ExperimentConfig(dgp=LinearInteraction(), replications=3),
        per_rep_theta=[0.5, 1.5],
        rep_index=[0, 2],
        unidentified_reps=[1],
        summary={
            "mean_theta": 1.0, "rep_sd": 0.7, "mc_se": 0.5, "ci_lo": 0.5, "ci_hi": 1.5,
            "rejects_truth": False, "identified_count": 2, "unidentified_count": 1,
        },
    )
    frame = to_frame(report)
    assert frame["identified"].tolist() == [1, 0, 1]
    assert pd.isna(frame.loc[1, "theta_hat"])


def test_svg_structure(sweep, tmp_path):
    path = emit_report(sweep, "svg", tmp_path / "sweep.svg")
    root = ET.parse(path).getroot()
    groups = {g.get("id"): g for g in root.iter(f"{SVG}g") if g.get("id")}
    dots = groups["replications"]
    uses = list(dots.iter(f"{SVG}use"))
    assert len(uses) == sum(len(p.per_rep_theta) for p in sweep.points)
    truth = groups["truth"]
    styles = [p.get("style", "") for p in truth.iter(f"{SVG}path")]
    assert any("stroke-dasharray" in s for s in styles)


def test_outputs_are_byte_identical(sweep, tmp_path):
    for fmt in ("csv", "json", "svg"):
        a = emit_report(sweep, fmt, tmp_path / f"a.{fmt}").read_bytes()
        b = emit_report(sweep, fmt, tmp_path / f"b.{fmt}").read_bytes()
        assert a == b, fmt


def test_audit_csv(tmp_path):
    ds = simulate(LinearInteraction(), 1000, seed=2)
    table = transform_audit(ds, ProductInstrument(), [TransformId.IDENTITY, TransformId.LOG1P])
    frame = pd.read_csv(emit_report(table, "csv", tmp_path / "audit.csv"))
    assert frame["transform"].tolist() == ["identity", "log1p"]
    assert frame["status"].tolist() == ["ok", "domain_error"]


def test_bad_formats(sweep, tmp_path):
    with pytest.raises(errors.ConfigError):
        emit_report(sweep, "xlsx", tmp_path / "sweep.xlsx")
    ds = simulate(LinearInteraction(), 500, seed=2)
    table = transform_audit(ds, ProductInstrument(), [TransformId.IDENTITY])
    with pytest.raises(errors.ConfigError):
        emit_report(table, "svg", tmp_path / "audit.svg")


def test_unwritable_path(sweep, tmp_path):
    with pytest.raises(errors.IoError) as info:
        emit_report(sweep, "csv", tmp_path / "missing" / "sweep.csv")
    assert info.value.exit_code == 4


def test_single_report_scatter(tmp_path):
    cfg = ExperimentConfig(dgp=LinearInteraction(), n_per_rep=100, replications=5, master_seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", errors.WeakInstrumentWarning)
        report = run_experiment(cfg, threads=1)
    path = emit_report(report, "svg", tmp_path / "one.svg")
    assert path.read_text(encoding="utf-8").lstrip().startswith("<?xml")
