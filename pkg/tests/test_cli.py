"""
Pruebas de la línea de comandos y sus códigos de salida
"""
import json

import pytest
from typer.testing import CliRunner

from cli import app

runner = CliRunner()

QUARTIC_TERM = {"coeff": [1, 10, 0, 1], "u_exponents": [0, 0, 0, 0], "zminus_exponents": [2, 2]}


def write_job(tmp_path, **overrides):
    raw = {"dims": {"n": 1, "p": 1, "q": 0}, "order": 4, "prepotential": [QUARTIC_TERM],
           "chart": {"radius": 0.05, "steps": 8}, "sample_points": 2, "ricci_points": 1, "seed": 0}
    raw.update(overrides)
    path = tmp_path / "job.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    return str(path)


def test_validate_ok(tmp_path):
    result = runner.invoke(app, ["validate", write_job(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "válido" in result.output


def test_validate_shipped_job():
    result = runner.invoke(app, ["validate", "jobs/quartic.json"])
    assert result.exit_code == 0, result.output


def test_validate_wrong_charge(tmp_path):
    term = {"coeff": [1, 1, 0, 1], "u_exponents": [0, 0, 0, 0], "zminus_exponents": [2, 0]}
    result = runner.invoke(app, ["validate", write_job(tmp_path, prepotential=[term])])
    assert result.exit_code == 1
    assert "NotCharge4" in result.output


def test_unknown_field_is_schema_error(tmp_path):
    term = dict(QUARTIC_TERM, zplus_exponents=[1, 0])
    result = runner.invoke(app, ["validate", write_job(tmp_path, prepotential=[term])])
    assert result.exit_code == 2


def test_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"dims": {"n": 1,', encoding="utf-8")
    result = runner.invoke(app, ["validate", str(path)])
    assert result.exit_code == 2


def test_missing_file(tmp_path):
    result = runner.invoke(app, ["validate", str(tmp_path / "nope.json")])
    assert result.exit_code == 2


def test_roundtrip(tmp_path):
    result = runner.invoke(app, ["roundtrip", write_job(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "idéntica" in result.output


def test_roundtrip_corrupt(tmp_path):
    result = runner.invoke(app, ["roundtrip", write_job(tmp_path), "--corrupt"])
    assert result.exit_code == 3


def test_schema_lists_job_fields():
    result = runner.invoke(app, ["schema"])
    assert result.exit_code == 0
    schema = json.loads(result.output)
    assert {"dims", "order", "prepotential"} <= set(schema["properties"])


def test_build_flat_writes_report(tmp_path):
    out = tmp_path / "report.json"
    result = runner.invoke(app, ["build", write_job(tmp_path, prepotential=[]), "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["status"] == "ok"
    assert report["exit_code"] == 0


def test_metric_with_explicit_points(tmp_path):
    out = tmp_path / "metric.json"
    result = runner.invoke(app, ["metric", write_job(tmp_path, prepotential=[]),
                                 "--points", "jobs/points.json", "--out", str(out)])
    assert result.exit_code == 0, result.output
    entries = json.loads(out.read_text(encoding="utf-8"))
    assert len(entries) == 3
    assert all(tuple(e["signature"]) == (4, 0) for e in entries)


def test_points_with_wrong_length(tmp_path):
    points = tmp_path / "points.json"
    points.write_text("[[0.0, 0.0]]", encoding="utf-8")
    result = runner.invoke(app, ["metric", write_job(tmp_path, prepotential=[]), "--points", str(points)])
    assert result.exit_code == 2


@pytest.mark.slow
def test_flat_test_command():
    result = runner.invoke(app, ["flat-test", "--order", "4", "--samples", "3"])
    assert result.exit_code == 0, result.output
    assert "reproducida" in result.output
