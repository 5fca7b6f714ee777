import datetime as dt

import numpy as np
import pandas as pd
import pytest

from forecastbench import bench
from forecastbench.config import parse_plan
from forecastbench.ingest import load_csv, save_csv
from forecastbench.metrics import METRIC_NAMES, evaluate_all
from forecastbench.simulate import bundled_path, generate

FAST_NEURAL = {"hidden_size": 4, "train": {"epochs": 2}}
FAST_DEEPAR = {"num_layers": 1, "hidden": 4, "num_samples": 20, "train": {"epochs": 1}}


def plan_for(models, **extra):
    doc = {"schema_version": 1, "dataset": {"path": "bundled:arima"}, "boundary": dt.date(2014, 6, 30),
           "horizon": 12, "models": models}
    doc.update(extra)
    return parse_plan(doc)


@pytest.fixture(scope="module")
def nine_rows():
    plan = plan_for([{"kind": "arima"}, {"kind": "lstm", **FAST_NEURAL}, {"kind": "deepar", **FAST_DEEPAR}])
    return plan, bench.run(plan)


def test_fnv1a_vectors():
    assert bench.fnv1a64("") == 0xCBF29CE484222325
    assert bench.fnv1a64("a") == 0xAF63DC4C8601EC8C
    assert bench.fnv1a64("foobar") == 0x85944171F73967E8
    assert bench.cell_seed("lstm", 0.5, 0) == bench.fnv1a64("lstm|0.5|0")
    assert bench.cell_seed("lstm", 0.5, 0) != bench.cell_seed("lstm", 0.25, 0)


def test_single_cell():
    result = bench.run(plan_for([{"kind": "arima"}], fractions=[1.0]))
    assert len(result.rows) == 1
    assert result.rows[0].ok


def test_nine_rows(nine_rows):
    plan, result = nine_rows
    assert len(result.rows) == 9
    assert [(r.model, r.fraction) for r in result.rows][:3] == [("arima", 1.0), ("lstm", 1.0), ("deepar", 1.0)]
    assert all(r.ok for r in result.rows), [r.error for r in result.rows]
    assert result.row("arima", 1.0).detail.startswith("order=(0,1,1)")


def test_test_segment_identity(nine_rows):
    _, result = nine_rows
    first = result.rows[0].actual.tobytes()
    assert all(r.actual.tobytes() == first for r in result.rows)
    assert all(np.array_equal(r.timestamps, result.rows[0].timestamps) for r in result.rows)


def test_modes(nine_rows):
    _, result = nine_rows
    assert result.row("arima", 0.5).windowed_report is None
    lstm = result.row("lstm", 0.5)
    assert lstm.windowed_point.shape == (12,)
    assert lstm.windowed_report is not None
    deepar = result.row("deepar", 0.25)
    assert deepar.forecast.samples.shape == (20, 12)


def test_rerun_bit_identical(nine_rows):
    plan, result = nine_rows
    assert bench.run(plan).fingerprint() == result.fingerprint()


def test_seed_changes_neural_cells(nine_rows):
    plan, result = nine_rows
    other = bench.run(plan.with_overrides(seed=1, fractions=(1.0,)))
    assert not np.array_equal(other.row("lstm", 1.0).forecast.point, result.row("lstm", 1.0).forecast.point)
    assert np.array_equal(other.row("arima", 1.0).forecast.point, result.row("arima", 1.0).forecast.point)


def test_worker_pool_matches_serial():
    models = [{"kind": "arima", "p": [0, 1], "q": [0, 1]}, {"kind": "rnn", **FAST_NEURAL}]
    serial = bench.run(plan_for(models, fractions=[1.0, 0.5]))
    pooled = bench.run(plan_for(models, fractions=[1.0, 0.5], jobs=2))
    assert pooled.fingerprint() == serial.fingerprint()


def test_failed_cell_becomes_row():
    # At 2% of the span the training slice is too short for any grid order.
    result = bench.run(plan_for([{"kind": "arima"}, {"kind": "rnn", **FAST_NEURAL}], fractions=[1.0, 0.02]))
    assert len(result.rows) == 4
    failed = result.row("arima", 0.02)
    assert not failed.ok and "AllFitsFailed" in failed.error
    assert result.row("rnn", 0.02).ok
    assert result.failed == [failed]


def test_sarimax_with_csv_columns(tmp_path):
    s = generate("arima", n=300, seed=2)
    frame = pd.DataFrame({"Date": np.datetime_as_string(s.timestamps, unit="D"), "Close": s.values,
                          "Volume": np.random.default_rng(0).uniform(1, 2, 300)})
    frame.to_csv(tmp_path / "data.csv", index=False)
    doc = {"schema_version": 1, "dataset": {"path": str(tmp_path / "data.csv")},
           "boundary": str(s.timestamps[250]), "horizon": 10, "fractions": [1.0],
           "models": [{"kind": "sarimax", "P": [0], "Q": [0], "exog_columns": ["Volume"]}]}
    result = bench.run(parse_plan(doc))
    assert result.rows[0].ok, result.rows[0].error


def test_weekday_dummies():
    days = np.array(["2011-01-03", "2011-01-04", "2011-01-07"], dtype="datetime64[D]")
    d = bench.weekday_dummies(days)
    assert d.tolist() == [[0, 0, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1]]


class TestReports:
    def test_counts(self, nine_rows, tmp_path):
        _, result = nine_rows
        bench.emit_reports(result, tmp_path)
        assert len(list((tmp_path / "forecasts").glob("*.csv"))) == 9
        assert sorted(p.stem for p in (tmp_path / "plots").glob("*.dat")) == sorted(METRIC_NAMES)
        metrics = bench.read_metrics(tmp_path / "metrics.csv")
        assert (metrics["mode"] == "direct").sum() == 9
        assert (metrics["mode"] == "windowed").sum() == 6

    def test_metrics_round_trip(self, nine_rows, tmp_path):
        _, result = nine_rows
        bench.emit_reports(result, tmp_path)
        metrics = bench.read_metrics(tmp_path / "metrics.csv")
        for _, row in metrics.iterrows():
            cell = result.row(row["model"], row["fraction"])
            rep = cell.report if row["mode"] == "direct" else cell.windowed_report
            for m in METRIC_NAMES:
                want = getattr(rep, m)
                assert (np.isnan(want) and np.isnan(row[m])) or row[m] == want

    def test_self_consistency(self, nine_rows, tmp_path):
        plan, result = nine_rows
        bench.emit_reports(result, tmp_path)
        metrics = bench.read_metrics(tmp_path / "metrics.csv")
        for _, row in metrics.iterrows():
            fc = pd.read_csv(tmp_path / "forecasts" / bench.forecast_filename(row["model"], row["fraction"]),
                             dtype=str, keep_default_na=False)
            column = "point" if row["mode"] == "direct" else "windowed_point"
            actual = [float(v) for v in fc["actual"]]
            output = [float(v) for v in fc[column]]
            rep = evaluate_all(actual, output, plan.mape_denominator, strict=False)
            for m in METRIC_NAMES:
                got = getattr(rep, m)
                assert (np.isnan(got) and np.isnan(row[m])) or got == row[m]

    def test_quantile_columns(self, nine_rows, tmp_path):
        _, result = nine_rows
        bench.emit_reports(result, tmp_path)
        deepar = pd.read_csv(tmp_path / "forecasts" / "deepar_1.csv")
        assert list(deepar.columns) == ["date", "actual", "point", "q10", "q50", "q90", "windowed_point"]
        assert (deepar["q10"] <= deepar["q90"]).all()
        arima = pd.read_csv(tmp_path / "forecasts" / "arima_0.5.csv")
        assert arima["q10"].isna().all()

    def test_markdown_marks_best(self, nine_rows, tmp_path):
        _, result = nine_rows
        bench.emit_reports(result, tmp_path)
        text = (tmp_path / "metrics.md").read_text(encoding="utf-8")
        assert "## Train fraction 0.25, direct" in text
        assert "**" in text
        assert "## Per-metric winners" in text

    def test_plot_data(self, nine_rows, tmp_path):
        _, result = nine_rows
        bench.emit_reports(result, tmp_path)
        lines = (tmp_path / "plots" / "rmse.dat").read_text().splitlines()
        assert lines[0] == "# fraction arima lstm lstm:windowed deepar deepar:windowed"
        assert [float(l.split()[0]) for l in lines[1:]] == [1.0, 0.5, 0.25]
        assert float(lines[1].split()[1]) == result.row("arima", 1.0).report.rmse

    def test_empty_result(self, tmp_path):
        bench.emit_reports(bench.BenchResult(), tmp_path)
        assert (tmp_path / "metrics.csv").read_text().strip() == ",".join(bench.METRICS_COLUMNS)
        assert len(list((tmp_path / "plots").glob("*.dat"))) == 6
        assert not list((tmp_path / "forecasts").iterdir())
        assert (tmp_path / "metrics.md").exists()


def test_bundled_arima_is_integrated():
    s = load_csv(bundled_path("arima"))
    assert len(s) == 1000
    save_csv(s, "/dev/null")
